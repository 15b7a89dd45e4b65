/** DOM rendering for the annotation workbench.
 *
 * The timeline groups events by timestamp with an admission marker at
 * t = 0; negative offsets are pre-admission history.  Label controls are
 * enabled only while a query is pending and nothing is in flight.
 */

import { EventRow, QueryPayload, Risk } from "./api.js";
import { ViewState } from "./controller.js";

export interface Handlers {
  onChoose(choice: Risk): void;
  onRetry(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function formatOffset(tHours: number): string {
  if (tHours === 0) return "admission (0 h)";
  const sign = tHours < 0 ? "−" : "+";
  return `${sign}${Math.abs(tHours)} h`;
}

function renderTimeline(doc: Document, events: EventRow[]): HTMLElement {
  const list = el(doc, "ol", "timeline");
  let group: HTMLElement | null = null;
  let groupTime: number | null = null;
  for (const row of events) {
    if (group === null || row.t_hours !== groupTime) {
      group = el(doc, "li", "timeline-group");
      groupTime = row.t_hours;
      const marker = el(
        doc,
        "span",
        row.t_hours === 0 ? "timeline-time admission-marker" : "timeline-time",
        formatOffset(row.t_hours),
      );
      group.appendChild(marker);
      group.appendChild(el(doc, "ul", "timeline-events"));
      list.appendChild(group);
    }
    const events_ul = group.querySelector("ul") as HTMLElement;
    const item = el(doc, "li", "timeline-event", row.event);
    events_ul.appendChild(item);
  }
  return list;
}

function renderProbBar(doc: Document, probs: [number, number]): HTMLElement {
  const bar = el(doc, "div", "prob-bar");
  const low = el(doc, "div", "prob-low", `low ${(probs[0] * 100).toFixed(1)}%`);
  low.style.width = `${probs[0] * 100}%`;
  const high = el(doc, "div", "prob-high", `high ${(probs[1] * 100).toFixed(1)}%`);
  high.style.width = `${probs[1] * 100}%`;
  bar.appendChild(low);
  bar.appendChild(high);
  return bar;
}

function renderSparkline(doc: Document, history: number[]): HTMLElement {
  const spark = el(doc, "div", "accuracy-sparkline");
  for (const value of history) {
    const tick = el(doc, "span", "spark-tick");
    tick.style.height = `${Math.round(value * 100)}%`;
    tick.title = value.toFixed(2);
    spark.appendChild(tick);
  }
  return spark;
}

function renderProgress(doc: Document, query: QueryPayload): HTMLElement {
  const progress = el(doc, "div", "progress");
  progress.appendChild(
    el(doc, "span", "labeled-count", `labeled: ${query.labeled_count}`),
  );
  progress.appendChild(
    el(doc, "span", "unlabeled-count", `pool: ${query.unlabeled_count}`),
  );
  progress.appendChild(el(doc, "span", "iteration", `iteration: ${query.iteration}`));
  return progress;
}

export function render(container: HTMLElement, state: ViewState, handlers: Handlers): void {
  const doc = container.ownerDocument;
  container.textContent = "";

  if (state.kind === "loading") {
    container.appendChild(el(doc, "p", "loading", "loading session…"));
    return;
  }

  if (state.kind === "error") {
    const banner = el(doc, "div", "error-banner");
    banner.appendChild(el(doc, "p", "error-message", state.message));
    if (state.raw !== undefined) {
      banner.appendChild(el(doc, "pre", "error-raw", JSON.stringify(state.raw, null, 2)));
    }
    const retry = el(doc, "button", "retry-button", "retry");
    retry.addEventListener("click", () => handlers.onRetry());
    banner.appendChild(retry);
    container.appendChild(banner);
    return;
  }

  if (state.kind === "done") {
    const done = el(doc, "div", "session-complete");
    done.appendChild(el(doc, "h2", undefined, "session complete"));
    done.appendChild(renderProgress(doc, state.query));
    const history = state.query.accuracy_history ?? state.status.accuracy_history;
    if (history && history.length > 0) {
      done.appendChild(renderSparkline(doc, history));
      done.appendChild(
        el(doc, "p", "final-accuracy", `final accuracy: ${history[history.length - 1]!.toFixed(2)}`),
      );
    }
    for (const label of ["Low", "High"]) {
      const button = el(doc, "button", "choice-button", label) as HTMLButtonElement;
      button.disabled = true;
      done.appendChild(button);
    }
    container.appendChild(done);
    return;
  }

  const { query, status, submitting } = state;
  const panel = el(doc, "div", "query-panel");
  panel.appendChild(el(doc, "h2", "case-id", query.case_id ?? ""));
  panel.appendChild(renderProgress(doc, query));
  if (status.test_count > 0 && status.accuracy_history.length > 0) {
    panel.appendChild(renderSparkline(doc, status.accuracy_history));
  }
  panel.appendChild(renderTimeline(doc, query.events ?? []));
  panel.appendChild(renderProbBar(doc, query.probs as [number, number]));

  const margin = el(doc, "div", "margin-readout", `margin: ${(query.margin as number).toFixed(3)}`);
  if (query.margin === 0) {
    margin.appendChild(el(doc, "span", "max-uncertain-badge", "maximally uncertain"));
  }
  panel.appendChild(margin);

  if (state.notice) {
    panel.appendChild(el(doc, "p", "notice", state.notice));
  }

  const controls = el(doc, "div", "choices");
  ([["Low", 0], ["High", 1]] as const).forEach(([label, risk]) => {
    const button = el(doc, "button", "choice-button", label) as HTMLButtonElement;
    button.disabled = submitting;
    button.addEventListener("click", () => handlers.onChoose(risk as Risk));
    controls.appendChild(button);
  });
  panel.appendChild(controls);
  container.appendChild(panel);
}

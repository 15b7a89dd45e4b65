// @vitest-environment jsdom
import { describe, expect, it, vi } from "vitest";

import { Risk } from "../src/api.js";
import { ViewState } from "../src/controller.js";
import { formatOffset, render } from "../src/view.js";
import { protocolServer, tableShapedCase } from "./fake-server.js";

function container(): HTMLElement {
  const node = document.createElement("div");
  document.body.appendChild(node);
  return node;
}

function queryState(overrides: Partial<ReturnType<typeof baseQuery>> = {}): ViewState {
  return { kind: "query", query: { ...baseQuery(), ...overrides }, status: baseStatus(), submitting: false };
}

function baseQuery() {
  const sample = tableShapedCase();
  return {
    done: false,
    iteration: 0,
    labeled_count: 4,
    unlabeled_count: 9,
    case_id: sample.caseId,
    events: sample.events,
    probs: sample.probs,
    margin: sample.margin,
  };
}

function baseStatus() {
  return protocolServer().statusPayload();
}

const noHandlers = { onChoose: () => {}, onRetry: () => {} };

describe("render", () => {
  it("shows all events time-ordered with the earliest first", () => {
    const node = container();
    render(node, queryState(), noHandlers);
    const events = [...node.querySelectorAll(".timeline-event")].map((n) => n.textContent);
    expect(events).toHaveLength(8);
    expect(events[0]).toBe("depression");
    const firstTime = node.querySelector(".timeline-time")!.textContent;
    expect(firstTime).toContain("672");
    expect(firstTime).toContain("−"); // pre-admission offsets are negative
  });

  it("groups same-timestamp events under one marker and flags admission", () => {
    const node = container();
    render(node, queryState(), noHandlers);
    const groups = node.querySelectorAll(".timeline-group");
    expect(groups).toHaveLength(6); // -672, -240, 0, 24, 120, 744
    expect(node.querySelector(".admission-marker")!.textContent).toContain("admission");
  });

  it("probability bar reflects both classes and sums to one", () => {
    const node = container();
    render(node, queryState(), noHandlers);
    const low = node.querySelector(".prob-low") as HTMLElement;
    const high = node.querySelector(".prob-high") as HTMLElement;
    expect(low.textContent).toContain("55.0%");
    expect(high.textContent).toContain("45.0%");
    const total =
      parseFloat(low.style.width.replace("%", "")) + parseFloat(high.style.width.replace("%", ""));
    expect(total).toBeCloseTo(100, 6);
  });

  it("margin 0 shows the maximally-uncertain badge", () => {
    const node = container();
    render(node, queryState({ margin: 0, probs: [0.5, 0.5] }), noHandlers);
    expect(node.querySelector(".max-uncertain-badge")).not.toBeNull();
  });

  it("nonzero margin hides the badge", () => {
    const node = container();
    render(node, queryState(), noHandlers);
    expect(node.querySelector(".max-uncertain-badge")).toBeNull();
  });

  it("choice clicks report the enumerated risk values only", () => {
    const node = container();
    const chosen: Risk[] = [];
    render(node, queryState(), { onChoose: (c) => chosen.push(c), onRetry: () => {} });
    const buttons = node.querySelectorAll<HTMLButtonElement>(".choice-button");
    expect(buttons).toHaveLength(2);
    buttons[0]!.click();
    buttons[1]!.click();
    expect(chosen).toEqual([0, 1]);
  });

  it("buttons disabled while a submission is in flight", () => {
    const node = container();
    const state = queryState();
    (state as Extract<ViewState, { kind: "query" }>).submitting = true;
    render(node, state, noHandlers);
    for (const button of node.querySelectorAll<HTMLButtonElement>(".choice-button")) {
      expect(button.disabled).toBe(true);
    }
  });

  it("done state disables controls and shows the final accuracy sparkline", () => {
    const node = container();
    const server = protocolServer();
    server.queue = [];
    server.accuracyHistory = [0.6, 0.8, 0.9];
    const state: ViewState = {
      kind: "done",
      query: server.queryPayload(),
      status: server.statusPayload(),
    };
    render(node, state, noHandlers);
    expect(node.querySelector(".session-complete")).not.toBeNull();
    for (const button of node.querySelectorAll<HTMLButtonElement>(".choice-button")) {
      expect(button.disabled).toBe(true);
    }
    expect(node.querySelectorAll(".spark-tick")).toHaveLength(3);
    expect(node.querySelector(".final-accuracy")!.textContent).toContain("0.90");
  });

  it("error state shows the banner with the raw payload and a retry hook", () => {
    const node = container();
    const onRetry = vi.fn();
    render(
      node,
      { kind: "error", message: "unexpected query payload", raw: { nonsense: true } },
      { onChoose: () => {}, onRetry },
    );
    expect(node.querySelector(".error-banner")).not.toBeNull();
    expect(node.querySelector(".error-raw")!.textContent).toContain("nonsense");
    (node.querySelector(".retry-button") as HTMLButtonElement).click();
    expect(onRetry).toHaveBeenCalledOnce();
  });
});

describe("formatOffset", () => {
  it("marks admission at zero", () => {
    expect(formatOffset(0)).toContain("admission");
  });
  it("negative hours render with a minus sign", () => {
    expect(formatOffset(-672)).toBe("−672 h");
  });
  it("positive hours render with a plus sign", () => {
    expect(formatOffset(744)).toBe("+744 h");
  });
});

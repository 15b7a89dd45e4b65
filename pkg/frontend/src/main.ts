import { ApiClient } from "./api.js";
import { SessionController } from "./controller.js";
import { render } from "./view.js";

function bootstrap(): void {
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get("session");
  const container = document.getElementById("app");
  if (!container) {
    throw new Error("missing #app container");
  }
  if (!sessionId) {
    container.textContent = "open with ?session=<id>";
    return;
  }
  const client = new ApiClient(params.get("api") ?? "");
  const controller = new SessionController(client, sessionId, (state) =>
    render(container, state, {
      onChoose: (choice) => void controller.submitAndAdvance(choice),
      onRetry: () => void controller.refresh(),
    }),
  );
  void controller.refresh();
}

bootstrap();

// Bootstrap: read the endpoint configuration, poll the control plane,
// render from each snapshot, and route form/table events to the API.
//
// Configuration is one setting — the control-plane URL — taken from the
// `api` query parameter (default: same origin), plus an optional `poll`
// interval in milliseconds (default 2000) and `token` for mutations.

import { ApiClient } from "./api.js";
import {
  applySnapshot,
  applyTransportError,
  initialState,
  formToManifest,
  type DashboardState,
  type DeployForm,
} from "./model.js";
import { renderAll } from "./render.js";

function config() {
  const params = new URLSearchParams(window.location.search);
  return {
    api: params.get("api") ?? window.location.origin,
    pollMs: Number(params.get("poll") ?? "2000"),
    token: params.get("token") ?? undefined,
  };
}

async function snapshot(client: ApiClient) {
  const [tasks, agents, attributes] = await Promise.all([
    client.listTasks(),
    client.listAgents(),
    client.listAttributes(),
  ]);
  return { tasks, agents, attributes };
}

export function start(root: HTMLElement): void {
  const { api, pollMs, token } = config();
  const client = new ApiClient(api, { token });
  let state: DashboardState = initialState();

  const handlers = {
    onAction(taskId: string, action: "kill" | "restart" | "logs") {
      if (action === "logs") {
        client
          .logs(taskId)
          .then((text) => window.alert(text || "(empty log)"))
          .catch((err) => window.alert(String(err)));
        return;
      }
      client
        .action(taskId, action)
        .then(() => refresh())
        .catch((err) => {
          state = applyTransportError(state, String(err));
          renderAll(root, state, handlers);
        });
    },
    onDeploy(form: DeployForm) {
      client
        .deploy(formToManifest(form), form.archive ?? new Uint8Array())
        .then(() => refresh())
        .catch((err) => {
          state = applyTransportError(state, String(err));
          renderAll(root, state, handlers);
        });
    },
  };

  const refresh = () =>
    snapshot(client)
      .then((snap) => {
        state = applySnapshot(state, snap);
        renderAll(root, state, handlers);
      })
      .catch((err) => {
        state = applyTransportError(state, String(err));
        renderAll(root, state, handlers);
      });

  refresh();
  window.setInterval(refresh, pollMs);
}

if (typeof document !== "undefined" && document.getElementById("dashboard-root")) {
  start(document.getElementById("dashboard-root") as HTMLElement);
}

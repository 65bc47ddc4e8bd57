// DOM layer: turns the view-model into elements and wires events back
// into the handlers. Nothing here keeps state of its own.

import type { DashboardState, DeployForm, RowView } from "./model.js";
import { constraintOptions, validateForm } from "./model.js";
import type { TaskAction } from "./types.js";

export interface Handlers {
  onAction(taskId: string, action: TaskAction): void;
  onDeploy(form: DeployForm): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: Array<Node | string>
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  node.append(...children);
  return node;
}

export function renderBanner(state: DashboardState): HTMLElement {
  if (!state.error) return el("div", { class: "banner hidden" });
  return el(
    "div",
    { class: "banner error" },
    `control plane unreachable: ${state.error} — showing the last snapshot`,
  );
}

function actionButton(view: RowView, action: TaskAction, handlers: Handlers): HTMLElement {
  const button = el("button", { class: `action-${action}` }, action);
  if (!view.actions[action]) button.setAttribute("disabled", "disabled");
  button.addEventListener("click", () => handlers.onAction(view.row.task_id, action));
  return button;
}

export function renderTaskTable(state: DashboardState, handlers: Handlers): HTMLElement {
  if (state.hasSnapshot && state.rows.length === 0) {
    return el("p", { class: "empty" }, "No tasks yet — deploy one above.");
  }
  const header = el(
    "tr",
    {},
    ...["Name", "Runtime", "Status", "Started", "Stopped", "Agent", "Actions"].map((h) =>
      el("th", {}, h),
    ),
  );
  const body = state.rows.map((view) => {
    const status = el("td", { class: `status-${view.row.status}` }, view.row.status);
    if (view.badge) status.append(" ", el("span", { class: "badge" }, view.badge));
    return el(
      "tr",
      { "data-task": view.row.task_id },
      el("td", {}, `${view.row.name} (${view.row.task_id})`),
      el("td", {}, view.row.runtime),
      status,
      el("td", {}, view.row.started === null ? "-" : String(view.row.started)),
      el("td", {}, view.row.stopped === null ? "-" : String(view.row.stopped)),
      el("td", {}, view.row.agent ?? "-"),
      el(
        "td",
        {},
        actionButton(view, "kill", handlers),
        actionButton(view, "restart", handlers),
        actionButton(view, "logs", handlers),
      ),
    );
  });
  return el("table", { class: "tasks" }, header, ...body);
}

export function renderDeployForm(state: DashboardState, handlers: Handlers): HTMLElement {
  const form = el("form", { class: "deploy" });
  const name = el("input", { name: "name", placeholder: "task name" });
  const runtime = el("select", { name: "runtime" });
  for (const kind of [
    "shell-script",
    "python-app",
    "nodejs-app",
    "jvm-app",
    "groovy-app",
    "browser-script",
    "sim-task",
  ]) {
    runtime.append(el("option", { value: kind }, kind));
  }
  const entry = el("input", { name: "entry", placeholder: "entry (script / class)" });
  const args = el("input", { name: "args", placeholder: "arguments" });
  const instances = el("input", { name: "instances", type: "number", value: "1" });
  const archive = el("input", { name: "archive", type: "file" });
  const picker = el("select", { name: "constraint" });
  picker.append(el("option", { value: "" }, "(no attribute constraint)"));
  for (const option of constraintOptions(state.attributes)) {
    const label = option.op === "exists" ? `${option.name} exists` : `${option.name} = ${option.value}`;
    picker.append(el("option", { value: JSON.stringify(option) }, label));
  }
  const errors = el("div", { class: "form-errors" });
  const submit = el("button", { type: "submit" }, "deploy");
  form.append(name, runtime, entry, args, instances, archive, picker, errors, submit);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const file = (archive as HTMLInputElement).files?.[0];
    const finish = (bytes: Uint8Array | null) => {
      const draft: DeployForm = {
        name: (name as HTMLInputElement).value,
        runtime: (runtime as HTMLSelectElement).value,
        entry: (entry as HTMLInputElement).value,
        args: (args as HTMLInputElement).value,
        instances: Number((instances as HTMLInputElement).value),
        archive: bytes,
        constraints: (picker as HTMLSelectElement).value
          ? [JSON.parse((picker as HTMLSelectElement).value)]
          : [],
        cpus: 0.1,
        mem_mb: 32,
        restart_policy: "auto",
      };
      const problems = validateForm(draft);
      errors.replaceChildren(
        ...Object.entries(problems).map(([field, message]) =>
          el("p", { class: "field-error", "data-field": field }, message as string),
        ),
      );
      if (Object.keys(problems).length === 0) handlers.onDeploy(draft);
    };
    if (file) {
      file.arrayBuffer().then((buf) => finish(new Uint8Array(buf)));
    } else {
      finish(null); // validation will flag the missing archive
    }
  });
  return form;
}

export function renderAll(root: HTMLElement, state: DashboardState, handlers: Handlers): void {
  root.replaceChildren(
    renderBanner(state),
    el("h2", {}, "Deploy"),
    renderDeployForm(state, handlers),
    el("h2", {}, "Tasks"),
    renderTaskTable(state, handlers),
    el("h2", {}, "Agents"),
    el(
      "ul",
      { class: "agents" },
      ...state.agents.map((a) =>
        el(
          "li",
          {},
          `${a.agent_id} (${a.liveness}) cpus ${a.allocated_cpus}/${a.cpus} mem ${a.allocated_mem_mb}/${a.mem_mb}`,
        ),
      ),
    ),
  );
}

// Pure view-model: everything the DOM layer shows is derived here from
// the latest control-plane snapshot, so rendering is stateless — the
// state after N polls equals the state computed from the final
// snapshot alone. A transport error only sets the banner; the last
// good snapshot keeps rendering underneath it.

import type { Snapshot, TaskAction, TaskRow, TaskStatus } from "./types.js";

// Mirror of the task lifecycle's legality: which operator actions make
// sense per state. Logs are available once a task has run anywhere.
const KILLABLE: TaskStatus[] = ["queued", "staging", "running"];
const RESTARTABLE: TaskStatus[] = ["failed", "killed", "lost"];

export interface RowView {
  row: TaskRow;
  actions: Record<TaskAction, boolean>;
  badge: string | null;
}

export function rowView(row: TaskRow): RowView {
  return {
    row,
    actions: {
      kill: KILLABLE.includes(row.status),
      restart: RESTARTABLE.includes(row.status),
      logs: true,
    },
    badge:
      row.status === "lost" && row.restart_policy === "auto" ? "requeue pending" : null,
  };
}

export interface DashboardState {
  rows: RowView[];
  agents: Snapshot["agents"];
  attributes: Snapshot["attributes"];
  error: string | null;
  hasSnapshot: boolean;
}

export function initialState(): DashboardState {
  return { rows: [], agents: [], attributes: {}, error: null, hasSnapshot: false };
}

export function applySnapshot(_prev: DashboardState, snapshot: Snapshot): DashboardState {
  // deliberately ignores _prev: the UI is a function of the snapshot
  return {
    rows: snapshot.tasks.map(rowView),
    agents: snapshot.agents,
    attributes: snapshot.attributes,
    error: null,
    hasSnapshot: true,
  };
}

export function applyTransportError(prev: DashboardState, message: string): DashboardState {
  return { ...prev, error: message };
}

// ---------------------------------------------------------------------------
// Deploy form

export interface ConstraintChoice {
  name: string;
  op: "exists" | "equals";
  value?: string;
}

export interface DeployForm {
  name: string;
  runtime: string;
  entry: string;
  args: string; // space separated, split on submit
  instances: number;
  archive: Uint8Array | null;
  constraints: ConstraintChoice[];
  cpus: number;
  mem_mb: number;
  restart_policy: "auto" | "manual";
}

export function emptyForm(): DeployForm {
  return {
    name: "",
    runtime: "shell-script",
    entry: "",
    args: "",
    instances: 1,
    archive: null,
    constraints: [],
    cpus: 0.1,
    mem_mb: 32,
    restart_policy: "auto",
  };
}

export type FormErrors = Partial<Record<"name" | "runtime" | "entry" | "archive" | "instances", string>>;

export function validateForm(form: DeployForm): FormErrors {
  const errors: FormErrors = {};
  if (!form.name.trim()) errors.name = "a task name is required";
  if (!form.runtime) errors.runtime = "pick a runtime";
  if (!form.entry.trim()) errors.entry = "the entry point is required";
  if (form.archive === null || form.archive.length === 0)
    errors.archive = "select a code archive";
  if (!Number.isInteger(form.instances) || form.instances < 1)
    errors.instances = "instances must be a positive integer";
  return errors;
}

export function formToManifest(form: DeployForm): object {
  const constraints = form.constraints.map((c) =>
    c.op === "exists"
      ? { name: c.name, op: "exists" }
      : { name: c.name, op: "equals", value: c.value ?? "" },
  );
  return {
    name: form.name.trim(),
    runtime: form.runtime,
    entry: form.entry.trim(),
    args: form.args.trim() ? form.args.trim().split(/\s+/) : [],
    instances: form.instances,
    required: { cpus: form.cpus, mem_mb: form.mem_mb },
    constraints,
    restart_policy: form.restart_policy,
  };
}

// Options for the constraint picker: one entry per (attribute, value)
// pair from the live catalog, plus a bare "exists" per attribute.
export function constraintOptions(attributes: Snapshot["attributes"]): ConstraintChoice[] {
  const options: ConstraintChoice[] = [];
  for (const name of Object.keys(attributes).sort()) {
    options.push({ name, op: "exists" });
    for (const value of attributes[name] ?? []) {
      options.push({ name, op: "equals", value: String(value) });
    }
  }
  return options;
}

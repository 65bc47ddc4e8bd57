// Shapes of control-plane responses. The dashboard renders these and
// nothing else: no client-side invention of state.

export type TaskStatus =
  | "queued"
  | "staging"
  | "running"
  | "finished"
  | "failed"
  | "lost"
  | "killed";

export interface TaskRow {
  name: string;
  task_id: string;
  runtime: string;
  status: TaskStatus;
  started: number | null;
  stopped: number | null;
  agent: string | null;
  restart_policy: string;
}

export interface AgentRow {
  agent_id: string;
  gateway_id: string;
  liveness: string;
  cpus: number;
  mem_mb: number;
  allocated_cpus: number;
  allocated_mem_mb: number;
  attributes: Record<string, unknown>;
}

export type AttributeCatalog = Record<string, Array<string | number>>;

export interface Snapshot {
  tasks: TaskRow[];
  agents: AgentRow[];
  attributes: AttributeCatalog;
}

export type TaskAction = "kill" | "restart" | "logs";

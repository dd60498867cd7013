// Typed client for the node HTTP API. Every screen derives its state from
// these responses alone; the client never caches or rewrites what the
// server sent.

export type FieldType = "text" | "int" | "dec" | "bool";

export interface MessageOption {
  id: string;
  type: string;
  from: string;
  arrived_at: number;
  payload: Record<string, unknown>;
}

export interface SendArm {
  type: string;
  to: string;
  cardinality: { kind: "one" | "all" | "choose"; min: number; max: number };
  max_instances: number;
  schema: Record<string, FieldType>;
}

export interface TaskView {
  id: string;
  instance: string;
  subject: string;
  index: number;
  agent: string;
  state: string;
  label: string;
  kind: "branch" | "send_targets" | "pick_message";
  occurrence: number;
  created_at: number;
  status: string;
  options: {
    labels?: string[];
    arms?: SendArm[];
    messages?: MessageOption[];
  };
}

export interface AgentView {
  agent: string;
  subject: string;
  index: number;
  state: string;
  label: string;
  status: string;
  pool: number;
}

export interface InstanceView {
  instance: string;
  process: string;
  agents: AgentView[];
  trace_tail: TraceRecord[];
  open_tasks: number;
}

export interface TraceRecord {
  seq: number;
  at_ms: number;
  kind: string;
  agent: string | null;
  detail: Record<string, unknown>;
}

export type Choice =
  | { branch: string; payload?: Record<string, unknown> }
  | { send: { targets?: number[]; type?: string; to?: string; payload?: Record<string, unknown> } }
  | { envelope: string };

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class NodeApi {
  constructor(
    public baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const data = text ? JSON.parse(text) : null;
    if (!response.ok) {
      const code = (data && data.error) || `HTTP_${response.status}`;
      throw new ApiError(response.status, code, (data && data.message) || response.statusText);
    }
    return data as T;
  }

  health(): Promise<{ status: string; company: string; processes: string[] }> {
    return this.request("GET", "/health");
  }

  tasks(filter: { subject?: string; instance?: string } = {}): Promise<TaskView[]> {
    const params = new URLSearchParams();
    if (filter.subject) params.set("subject", filter.subject);
    if (filter.instance) params.set("instance", filter.instance);
    const query = params.toString();
    return this.request("GET", `/tasks${query ? "?" + query : ""}`);
  }

  completeTask(taskId: string, choice: Choice): Promise<{ task: string; emitted: number }> {
    return this.request("POST", `/tasks/${encodeURIComponent(taskId)}/complete`, { choice });
  }

  instances(): Promise<string[]> {
    return this.request("GET", "/instances");
  }

  instance(id: string): Promise<InstanceView> {
    return this.request("GET", `/instances/${encodeURIComponent(id)}`);
  }
}

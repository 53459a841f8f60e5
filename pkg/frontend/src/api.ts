/**
 * Typed client for the gateway admin API (/admin/api/v1).
 *
 * The bearer token is entered once per browser session and held in memory
 * only; every view reconstructs its state from these endpoints alone.
 */

export interface RuleFilter {
  column: string;
  value?: string;
  param?: string;
}

export type RuleJson =
  | { kind: "literal"; value: string }
  | { kind: "regex"; value: string }
  | { kind: "any" }
  | { kind: "set"; table: string; column: string; filters: RuleFilter[] };

export interface TransitionView {
  id: number;
  from: string;
  to: string;
  page: string;
  params: Record<string, RuleJson>;
}

export interface WorkflowView {
  id: string;
  name: string;
  states: string[];
  start_state: string;
  start_page: string;
  transitions: TransitionView[];
}

export interface RoleView {
  id: string;
  name: string;
  workflow_ids: string[];
  required_auth: string[];
}

export interface UserView {
  id: string;
  federated_name: string;
  idp: string;
  role_ids: string[];
  token: { firmcode: string; usercode: string } | null;
  upstream: { username: string; secret: string } | null;
}

export interface UserDraft {
  id: string;
  federated_name: string;
  role_ids: string[];
  password?: string;
  token?: { firmcode: string; usercode: string } | null;
  upstream?: { username: string; secret: string } | null;
}

export interface StepView {
  page: string;
  params: Record<string, string[]>;
  captured_at: number;
}

export interface RecordingView {
  id: string;
  name: string;
  trainer: string;
  state: string;
  steps: StepView[];
  next_cursor: number;
}

export interface SessionView {
  id: string;
  user_id: string;
  federated_name: string;
  methods: string[];
  created_at: number;
  last_activity_at: number;
  last_beacon_at: number;
  token_present: boolean;
  terminated: boolean;
  end_reason: string | null;
  status: string;
  active_workflows: string[];
}

export interface Violation {
  code: string;
  subject: string;
  detail: string;
}

// --- errors ---

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
    readonly violations: Violation[] = [],
  ) {
    super(`${status} ${code}${detail ? `: ${detail}` : ""}`);
  }
}

function unwrapError(status: number, body: unknown): ApiError {
  const detail = (body as { detail?: unknown })?.detail;
  if (detail && typeof detail === "object") {
    const doc = detail as Record<string, unknown>;
    return new ApiError(
      status,
      String(doc.error ?? "error"),
      typeof doc.detail === "string" ? doc.detail : "",
      Array.isArray(doc.violations) ? (doc.violations as Violation[]) : [],
    );
  }
  return new ApiError(status, "error", typeof detail === "string" ? detail : "");
}

// --- client ---

export class AdminApi {
  constructor(
    private readonly token: string,
    readonly base: string = "/admin/api/v1",
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.base + path, {
        method,
        headers: {
          Authorization: `Bearer ${this.token}`,
          ...(body === undefined ? {} : { "Content-Type": "application/json" }),
        },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, "unreachable", String(err));
    }
    if (!response.ok) {
      let parsed: unknown = null;
      try {
        parsed = await response.json();
      } catch {
        // non-JSON error body, keep the status only
      }
      throw unwrapError(response.status, parsed);
    }
    return (await response.json()) as T;
  }

  // --- workflows ---

  async listWorkflows(): Promise<WorkflowView[]> {
    const doc = await this.request<{ workflows: WorkflowView[] }>("GET", "/workflows");
    return doc.workflows;
  }

  getWorkflow(id: string): Promise<WorkflowView> {
    return this.request("GET", `/workflows/${encodeURIComponent(id)}`);
  }

  putParamRule(
    workflowId: string,
    transitionId: number,
    paramName: string,
    rule: RuleJson,
  ): Promise<WorkflowView> {
    const path =
      `/workflows/${encodeURIComponent(workflowId)}` +
      `/transitions/${transitionId}/params/${encodeURIComponent(paramName)}`;
    return this.request("PUT", path, rule);
  }

  // --- roles ---

  async listRoles(): Promise<RoleView[]> {
    const doc = await this.request<{ roles: RoleView[] }>("GET", "/roles");
    return doc.roles;
  }

  createRole(role: Omit<RoleView, never>): Promise<RoleView> {
    return this.request("POST", "/roles", role);
  }

  updateRole(id: string, role: Omit<RoleView, never>): Promise<RoleView> {
    return this.request("PUT", `/roles/${encodeURIComponent(id)}`, role);
  }

  deleteRole(id: string): Promise<{ deleted: string }> {
    return this.request("DELETE", `/roles/${encodeURIComponent(id)}`);
  }

  // --- users ---

  async listUsers(): Promise<UserView[]> {
    const doc = await this.request<{ users: UserView[] }>("GET", "/users");
    return doc.users;
  }

  createUser(user: UserDraft): Promise<UserView> {
    return this.request("POST", "/users", user);
  }

  updateUser(id: string, user: Partial<UserDraft>): Promise<UserView> {
    return this.request("PUT", `/users/${encodeURIComponent(id)}`, user);
  }

  deleteUser(id: string): Promise<{ deleted: string }> {
    return this.request("DELETE", `/users/${encodeURIComponent(id)}`);
  }

  // --- recordings ---

  async listRecordings(): Promise<RecordingView[]> {
    const doc = await this.request<{ recordings: RecordingView[] }>("GET", "/recordings");
    return doc.recordings;
  }

  startRecording(name: string, trainer: string): Promise<RecordingView> {
    return this.request("POST", "/recordings", { name, trainer });
  }

  stopRecording(id: string): Promise<RecordingView> {
    return this.request("POST", `/recordings/${encodeURIComponent(id)}/stop`);
  }

  recordingSteps(id: string, since: number): Promise<RecordingView> {
    return this.request("GET", `/recordings/${encodeURIComponent(id)}/steps?since=${since}`);
  }

  promoteRecording(
    id: string,
    role: string,
    workflowId?: string,
  ): Promise<{ workflow: WorkflowView; role: string }> {
    const body: Record<string, string> = { role };
    if (workflowId) {
      body.workflow_id = workflowId;
    }
    return this.request("POST", `/recordings/${encodeURIComponent(id)}/promote`, body);
  }

  // --- sessions ---

  async listSessions(): Promise<SessionView[]> {
    const doc = await this.request<{ sessions: SessionView[] }>("GET", "/sessions");
    return doc.sessions;
  }

  terminateSession(id: string): Promise<{ terminated: boolean }> {
    return this.request("POST", `/sessions/${encodeURIComponent(id)}/terminate`);
  }
}

// Thin typed client over the session service. All amounts stay strings:
// the UI never parses money beyond inspecting the sign character.

export interface OutcomeCard {
  kind: string;
  setpoint: number;
  incremental_cost: string;
  incremental_cost_display: string;
}

export interface DecisionView {
  outcome_kind: string;
  setpoint: number;
  sum_valuations: string;
  incremental_cost: string;
  welfare: string;
  my_payment: string | null;
  my_balance: string | null;
}

export interface RoundView {
  session_id: string;
  round_index: number | null;
  phase: string;
  t0: number;
  state: string;
  deadline: number | null;
  reports_submitted: number;
  outcomes: OutcomeCard[];
  my_report: number | null;
  decision: DecisionView | null;
}

export interface ApiEvent {
  seq: number;
  kind: string;
  payload: Record<string, unknown>;
}

export interface LedgerEntry {
  round_index: number;
  amount: string;
  reason: string;
  balance: string;
}

export interface LedgerView {
  occupant: string;
  balance: string;
  entries: LedgerEntry[];
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(message: string, public readonly status: number) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch.bind(globalThis),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      const body = await resp.text();
      const error = new ApiError(`${resp.status} ${path}: ${body}`, resp.status);
      throw error;
    }
    return (await resp.json()) as T;
  }

  getRound(sessionId: string, token?: string): Promise<RoundView> {
    const query = token ? `?token=${encodeURIComponent(token)}` : "";
    return this.request<RoundView>(`/sessions/${sessionId}/round${query}`);
  }

  submitReport(sessionId: string, token: string, typeId: number): Promise<unknown> {
    return this.request(`/sessions/${sessionId}/reports`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ token, type_id: typeId }),
    });
  }

  getLedger(sessionId: string, token: string): Promise<LedgerView> {
    return this.request<LedgerView>(
      `/sessions/${sessionId}/ledger?token=${encodeURIComponent(token)}`,
    );
  }

  getEvents(
    sessionId: string,
    token: string,
    after: number,
    waitMs = 0,
  ): Promise<{ events: ApiEvent[]; last_seq: number }> {
    const query = `?after=${after}&token=${encodeURIComponent(token)}&wait_ms=${waitMs}`;
    return this.request(`/sessions/${sessionId}/events${query}`);
  }

  openRound(sessionId: string, adminToken: string): Promise<RoundView> {
    return this.request<RoundView>(`/sessions/${sessionId}/admin/open-round`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ token: adminToken }),
    });
  }

  closeRound(sessionId: string, adminToken: string): Promise<RoundView> {
    return this.request<RoundView>(`/sessions/${sessionId}/admin/close-round`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ token: adminToken }),
    });
  }
}

export interface PollerHooks {
  onEvents(events: ApiEvent[]): void;
  onConnectionChange(online: boolean): void;
  onAuthError?(): void;
}

/** Long-poll loop with sequence-number de-duplication and backoff retry. */
export class EventPoller {
  private lastSeq = 0;
  private stopped = false;
  private backoffMs = 1000;

  constructor(
    private client: ApiClient,
    private sessionId: string,
    private token: string,
    private hooks: PollerHooks,
    private waitMs = 25000,
  ) {}

  seen(): number {
    return this.lastSeq;
  }

  stop(): void {
    this.stopped = true;
  }

  async pollOnce(): Promise<void> {
    const resp = await this.client.getEvents(
      this.sessionId,
      this.token,
      this.lastSeq,
      this.waitMs,
    );
    // at-least-once delivery: drop anything at or below the high-water mark
    const fresh = resp.events.filter((e) => e.seq > this.lastSeq);
    if (fresh.length > 0) {
      this.lastSeq = fresh[fresh.length - 1].seq;
      this.hooks.onEvents(fresh);
    }
  }

  async run(): Promise<void> {
    while (!this.stopped) {
      try {
        await this.pollOnce();
        this.backoffMs = 1000;
        this.hooks.onConnectionChange(true);
      } catch (err) {
        if (err instanceof ApiError && (err.status === 401 || err.status === 403)) {
          this.hooks.onAuthError?.();
          return; // a stale token will not heal by retrying
        }
        this.hooks.onConnectionChange(false);
        await sleep(this.backoffMs);
        this.backoffMs = Math.min(this.backoffMs * 2, 10000);
      }
    }
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

// UI state is a pure fold over the server's event stream plus the local
// pending report. Refreshing the page and replaying the same events must
// land on the same state, so nothing here depends on wall-clock side effects.

import type { ApiEvent, OutcomeCard } from "./api.js";

export interface DecisionSummary {
  outcomeKind: string;
  setpoint: number;
  // verbatim ledger strings; positive means the account was credited
  accountChange: string | null;
  balance: string | null;
  welfare: string;
  incrementalCost: string;
  payments: Record<string, string>;
}

export interface UiState {
  sessionId: string | null;
  occupant: string | null;
  phase: string;
  t0: number | null;
  roundIndex: number | null;
  roundState: "NotStarted" | "Open" | "Decided";
  deadline: number | null;
  outcomes: OutcomeCard[];
  reportsSubmitted: number;
  myReport: number | null;
  pendingReport: number | null;
  decision: DecisionSummary | null;
  balance: string;
  online: boolean;
  authFailed: boolean;
  lastSeq: number;
}

export function initialState(occupant: string | null): UiState {
  return {
    sessionId: null,
    occupant,
    phase: "",
    t0: null,
    roundIndex: null,
    roundState: "NotStarted",
    deadline: null,
    outcomes: [],
    reportsSubmitted: 0,
    myReport: null,
    pendingReport: null,
    decision: null,
    balance: "0.0",
    online: true,
    authFailed: false,
    lastSeq: 0,
  };
}

interface CostEntryPayload {
  kind: string;
  setpoint: number;
  incremental: string;
}

function asDisplay(amount: string): string {
  // fixed-point preview for card labels, by string truncation only: the
  // UI never converts money strings into numbers
  const dot = amount.indexOf(".");
  if (dot === -1) {
    return amount;
  }
  return amount.slice(0, dot + 5);
}

export function applyEvent(state: UiState, event: ApiEvent): UiState {
  if (event.seq <= state.lastSeq) {
    return state; // duplicate delivery
  }
  const next: UiState = { ...state, lastSeq: event.seq };
  const p = event.payload as Record<string, any>;
  switch (event.kind) {
    case "SessionCreated": {
      next.sessionId = p["session_id"] as string;
      next.phase = (p["config"] as Record<string, any>)["phase"] as string;
      next.t0 = (p["config"] as Record<string, any>)["initial_temp"] as number;
      break;
    }
    case "RoundOpened": {
      next.roundIndex = p["round"] as number;
      next.t0 = p["t0"] as number;
      next.phase = p["phase"] as string;
      next.deadline = p["deadline"] as number;
      next.roundState = "Open";
      next.reportsSubmitted = 0;
      next.myReport = null;
      next.pendingReport = null;
      next.decision = null;
      const entries = (p["costs"] as Record<string, any>)["entries"] as CostEntryPayload[];
      next.outcomes = entries.map((e) => ({
        kind: e.kind,
        setpoint: e.setpoint,
        incremental_cost: e.incremental,
        incremental_cost_display: asDisplay(e.incremental),
      }));
      break;
    }
    case "ReportSubmitted":
    case "ReportDefaulted": {
      next.reportsSubmitted = state.reportsSubmitted + 1;
      if (state.occupant !== null && p["occupant"] === state.occupant) {
        next.myReport = p["type_id"] as number;
        next.pendingReport = null;
      }
      break;
    }
    case "RoundDecided": {
      next.roundState = "Decided";
      next.t0 = p["next_t0"] as number;
      next.phase = p["next_phase"] as string;
      const payments = (p["payments"] ?? {}) as Record<string, string>;
      next.decision = {
        outcomeKind: (p["outcome"] as Record<string, any>)["kind"] as string,
        setpoint: (p["outcome"] as Record<string, any>)["setpoint"] as number,
        accountChange: null,
        balance: null,
        welfare: (p["welfare"] as Record<string, any>)["welfare"] as string,
        incrementalCost: (p["welfare"] as Record<string, any>)["incremental_cost"] as string,
        payments,
      };
      break;
    }
    case "LedgerPosted": {
      const entries = (p["entries"] ?? []) as Array<Record<string, string>>;
      for (const entry of entries) {
        if (state.occupant !== null && entry["occupant"] === state.occupant) {
          next.balance = entry["balance"];
          if (next.decision) {
            next.decision = {
              ...next.decision,
              accountChange: entry["amount"],
              balance: entry["balance"],
            };
          }
        }
      }
      break;
    }
    default:
      break;
  }
  return next;
}

export function applyEvents(state: UiState, events: ApiEvent[]): UiState {
  let current = state;
  for (const event of events) {
    current = applyEvent(current, event);
  }
  return current;
}

export function setPending(state: UiState, typeId: number | null): UiState {
  return { ...state, pendingReport: typeId };
}

export function setOnline(state: UiState, online: boolean): UiState {
  return online === state.online ? state : { ...state, online };
}

export function setAuthFailed(state: UiState): UiState {
  return { ...state, authFailed: true };
}

export function submissionOpen(state: UiState, nowSeconds: number): boolean {
  if (state.roundState !== "Open") {
    return false;
  }
  return state.deadline === null || nowSeconds <= state.deadline;
}

export function countdownSeconds(state: UiState, nowSeconds: number): number | null {
  if (state.roundState !== "Open" || state.deadline === null) {
    return null;
  }
  return Math.max(0, Math.floor(state.deadline - nowSeconds));
}

/** Sign-only inspection; the string itself is never parsed into a number. */
export function accountChangeWording(accountChange: string): string {
  return accountChange.startsWith("-") ? "you pay" : "you receive";
}

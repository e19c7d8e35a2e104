// DOM rendering. Pure functions of (document, state, now): the tests drive
// them with jsdom, the browser entry point with the real document.

import type { UiState } from "./state.js";
import { accountChangeWording, countdownSeconds, submissionOpen } from "./state.js";

export interface Handlers {
  onPickType(typeId: number): void;
}

const TYPE_GROUPS: Array<{ label: string; ids: number[] }> = [
  { label: "Prefer cooler", ids: [1, 2, 3] },
  { label: "Prefer current", ids: [4, 5, 6] },
  { label: "Prefer warmer", ids: [7, 8, 9] },
];

const TYPE_LABELS: Record<number, string> = {
  1: "Cooler (1)", 2: "Cooler (2)", 3: "Cooler (3)",
  4: "Current (1)", 5: "Current (2)", 6: "Current (3)",
  7: "Warmer (1)", 8: "Warmer (2)", 9: "Warmer (3)",
};

function el(
  doc: Document,
  tag: string,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElement {
  const node = doc.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export function renderOccupant(
  doc: Document,
  root: HTMLElement,
  state: UiState,
  nowSeconds: number,
  handlers: Handlers,
): void {
  root.textContent = "";

  if (state.authFailed) {
    root.appendChild(
      el(doc, "div", { class: "banner offline", "data-testid": "reauth-prompt" },
        "Your session token was not accepted. Check the link you were given " +
        "and reload with a valid #token."),
    );
    return;
  }

  if (!state.online) {
    root.appendChild(
      el(doc, "div", { class: "banner offline", "data-testid": "offline-banner" },
        "Connection lost; retrying..."),
    );
  }

  const header = el(doc, "div", { class: "header" });
  header.appendChild(
    el(doc, "h1", {}, state.t0 === null ? "Waiting for session" : `Room at ${state.t0} degC`),
  );
  header.appendChild(
    el(doc, "span", { class: "phase", "data-testid": "phase" }, state.phase),
  );
  root.appendChild(header);

  const remaining = countdownSeconds(state, nowSeconds);
  if (remaining !== null) {
    const minutes = Math.floor(remaining / 60);
    const seconds = remaining % 60;
    root.appendChild(
      el(doc, "div", { class: "countdown", "data-testid": "countdown" },
        `${minutes}:${String(seconds).padStart(2, "0")} to report`),
    );
  }

  const cards = el(doc, "div", { class: "cards", "data-testid": "outcome-cards" });
  for (const card of state.outcomes) {
    const cardEl = el(doc, "div", {
      class: `card ${card.kind}`,
      "data-testid": "outcome-card",
      "data-kind": card.kind,
    });
    cardEl.appendChild(el(doc, "div", { class: "setpoint" }, `${card.setpoint} degC`));
    cardEl.appendChild(el(doc, "div", { class: "kind" }, card.kind));
    cardEl.appendChild(
      el(doc, "div", { class: "cost" }, `dC ${card.incremental_cost_display}`),
    );
    cards.appendChild(cardEl);
  }
  root.appendChild(cards);

  const open = submissionOpen(state, nowSeconds);
  const picker = el(doc, "div", { class: "picker", "data-testid": "picker" });
  for (const group of TYPE_GROUPS) {
    const groupEl = el(doc, "div", { class: "group" });
    groupEl.appendChild(el(doc, "div", { class: "group-label" }, group.label));
    for (const id of group.ids) {
      const selected = state.myReport === id || state.pendingReport === id;
      const button = el(doc, "button", {
        class: `type-button${selected ? " selected" : ""}`,
        "data-testid": `type-${id}`,
        type: "button",
      }, TYPE_LABELS[id]);
      if (!open) {
        button.setAttribute("disabled", "disabled");
      } else {
        button.addEventListener("click", () => handlers.onPickType(id));
      }
      groupEl.appendChild(button);
    }
    picker.appendChild(groupEl);
  }
  root.appendChild(picker);
  if (!open && state.roundState === "Open") {
    root.appendChild(
      el(doc, "div", { class: "notice", "data-testid": "deadline-notice" },
        "The reporting deadline for this round has passed."),
    );
  }

  if (state.myReport !== null) {
    root.appendChild(
      el(doc, "div", { class: "ack", "data-testid": "my-report" },
        `Recorded: ${TYPE_LABELS[state.myReport]}`),
    );
  }

  if (state.decision !== null) {
    const banner = el(doc, "div", { class: "banner decision", "data-testid": "decision-banner" });
    banner.appendChild(
      el(doc, "div", { class: "outcome" },
        `Decision: ${state.decision.outcomeKind} to ${state.decision.setpoint} degC`),
    );
    if (state.decision.accountChange !== null) {
      const wording = accountChangeWording(state.decision.accountChange);
      const line = el(doc, "div", { class: "payment" });
      line.appendChild(doc.createTextNode(`${wording} `));
      line.appendChild(
        el(doc, "span", { "data-testid": "payment-amount" }, state.decision.accountChange),
      );
      banner.appendChild(line);
    }
    if (state.decision.balance !== null) {
      const line = el(doc, "div", { class: "balance" });
      line.appendChild(doc.createTextNode("balance "));
      line.appendChild(
        el(doc, "span", { "data-testid": "balance-amount" }, state.decision.balance),
      );
      banner.appendChild(line);
    }
    root.appendChild(banner);
  }

  // everything beyond the simplified deployment view lives behind a toggle
  const details = el(doc, "details", { "data-testid": "details" });
  details.appendChild(el(doc, "summary", {}, "details"));
  details.appendChild(
    el(doc, "div", {},
      `round ${state.roundIndex ?? "n/a"} / phase ${state.phase || "n/a"} / ` +
      `${state.reportsSubmitted} reports / last event ${state.lastSeq}`),
  );
  if (state.decision !== null) {
    details.appendChild(
      el(doc, "div", {},
        `group value ${state.decision.welfare} after incremental cost ` +
        `${state.decision.incrementalCost}`),
    );
  }
  for (const card of state.outcomes) {
    details.appendChild(
      el(doc, "div", {}, `${card.kind} ${card.setpoint} degC: dC ${card.incremental_cost}`),
    );
  }
  root.appendChild(details);
}

export interface CoordinatorHandlers {
  onOpenRound(): void;
  onCloseRound(): void;
}

/**
 * Coordinator panel: round controls plus a per-round conservation badge.
 * The badge compares the sum of posted payments with the decided outcome's
 * incremental cost; amounts themselves are still rendered verbatim.
 */
export function renderCoordinator(
  doc: Document,
  root: HTMLElement,
  state: UiState,
  handlers: CoordinatorHandlers,
): void {
  root.textContent = "";
  root.appendChild(el(doc, "h1", {}, "Coordinator"));
  root.appendChild(
    el(doc, "div", { "data-testid": "coordinator-phase" },
      `phase: ${state.phase || "n/a"} / T0: ${state.t0 ?? "n/a"} / round: ${
        state.roundIndex ?? "none"} (${state.roundState})`),
  );

  const openBtn = el(doc, "button", { "data-testid": "open-round", type: "button" }, "Open round");
  const closeBtn = el(doc, "button", { "data-testid": "close-round", type: "button" }, "Close round");
  if (state.roundState === "Open") {
    openBtn.setAttribute("disabled", "disabled");
    closeBtn.addEventListener("click", () => handlers.onCloseRound());
  } else {
    closeBtn.setAttribute("disabled", "disabled");
    openBtn.addEventListener("click", () => handlers.onOpenRound());
  }
  root.appendChild(openBtn);
  root.appendChild(closeBtn);

  root.appendChild(
    el(doc, "div", { "data-testid": "reports-count" },
      `${state.reportsSubmitted} reports submitted`),
  );

  if (state.decision !== null) {
    const list = el(doc, "ul", { "data-testid": "payments-list" });
    let sum = 0;
    let count = 0;
    for (const [occ, amount] of Object.entries(state.decision.payments)) {
      list.appendChild(el(doc, "li", {}, `${occ}: ${amount}`));
      sum += Number(amount); // conservation check only; never displayed
      count += 1;
    }
    root.appendChild(list);
    if (count > 0) {
      const ok = Math.abs(sum - Number(state.decision.incrementalCost)) < 1e-9;
      root.appendChild(
        el(doc, "div", {
          class: ok ? "check ok" : "check bad",
          "data-testid": "conservation-check",
        }, ok ? "payments cover the incremental cost" : "CONSERVATION VIOLATION"),
      );
    }
  }
}

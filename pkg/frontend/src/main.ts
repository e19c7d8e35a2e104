// Browser entry point: wires the API client, the event fold, and the DOM.
// The same startApp() drives the jsdom-based tests against a live service.

import { ApiClient, EventPoller, type FetchLike } from "./api.js";
import { renderCoordinator, renderOccupant, type Handlers } from "./render.js";
import {
  applyEvents,
  initialState,
  setAuthFailed,
  setOnline,
  setPending,
  submissionOpen,
  type UiState,
} from "./state.js";

export interface AppConfig {
  doc: Document;
  root: HTMLElement;
  baseUrl: string;
  sessionId: string;
  token: string;
  occupant: string | null; // null for the coordinator view
  coordinator?: boolean;
  fetchImpl?: FetchLike;
  pollWaitMs?: number;
  now?: () => number; // seconds
}

export interface App {
  state(): UiState;
  stop(): void;
  refresh(): void;
  pollOnce(): Promise<void>;
  started: Promise<void>;
}

export function startApp(config: AppConfig): App {
  const client = new ApiClient(config.baseUrl, config.fetchImpl);
  const now = config.now ?? (() => Date.now() / 1000);
  let state = initialState(config.occupant);
  let stopped = false;

  const handlers: Handlers = {
    onPickType(typeId: number) {
      if (!submissionOpen(state, now())) {
        return;
      }
      if (state.pendingReport === typeId || state.myReport === typeId) {
        return; // double-tap: one report
      }
      state = setPending(state, typeId);
      render();
      client.submitReport(config.sessionId, config.token, typeId).catch(() => {
        state = setPending(state, null);
        render();
      });
    },
  };

  const coordinatorHandlers = {
    onOpenRound() {
      client.openRound(config.sessionId, config.token).catch(() => undefined);
    },
    onCloseRound() {
      client.closeRound(config.sessionId, config.token).catch(() => undefined);
    },
  };

  function render() {
    if (stopped) {
      return;
    }
    if (config.coordinator) {
      renderCoordinator(config.doc, config.root, state, coordinatorHandlers);
    } else {
      renderOccupant(config.doc, config.root, state, now(), handlers);
    }
  }

  const poller = new EventPoller(
    client,
    config.sessionId,
    config.token,
    {
      onEvents(events) {
        state = applyEvents(state, events);
        render();
      },
      onConnectionChange(online) {
        state = setOnline(state, online);
        render();
      },
      onAuthError() {
        state = setAuthFailed(state);
        render();
      },
    },
    config.pollWaitMs ?? 25000,
  );

  const started = poller.pollOnce().then(
    () => render(),
    () => {
      state = setOnline(state, false);
      render();
    },
  );
  const loop = started.then(() => poller.run());
  void loop;

  const ticker = setInterval(render, 1000);

  return {
    state: () => state,
    refresh: render,
    pollOnce: () => poller.pollOnce().then(render),
    stop() {
      stopped = true;
      poller.stop();
      clearInterval(ticker);
    },
    started,
  };
}

/** Parse "#session=<id>&token=<tok>&occupant=<name>&view=coordinator". */
export function parseFragment(fragment: string): Record<string, string> {
  const out: Record<string, string> = {};
  for (const pair of fragment.replace(/^#/, "").split("&")) {
    const [key, value] = pair.split("=");
    if (key && value !== undefined) {
      out[key] = decodeURIComponent(value);
    }
  }
  return out;
}

declare global {
  interface Window {
    thermoshareApp?: App;
  }
}

export function bootFromLocation(win: Window & typeof globalThis): App | null {
  const doc = win.document;
  const root = doc.getElementById("app");
  if (!root) {
    return null;
  }
  const params = parseFragment(win.location.hash);
  if (!params["session"] || !params["token"]) {
    root.textContent =
      "Provide #session=<id>&token=<your token> in the URL " +
      "(&view=coordinator for the coordinator panel).";
    return null;
  }
  const app = startApp({
    doc,
    root: root as HTMLElement,
    baseUrl: "",
    sessionId: params["session"],
    token: params["token"],
    occupant: params["occupant"] ?? null,
    coordinator: params["view"] === "coordinator",
  });
  win.thermoshareApp = app;
  return app;
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", () => bootFromLocation(window));
  } else {
    bootFromLocation(window);
  }
}

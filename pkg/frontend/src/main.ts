// Boot: resolve the token, then poll /session and stream /events forever.
// The console is a pure view/controller - closing this tab changes nothing
// server-side, and every mutation is an explicit facilitator command.

import { CommandRejected, ConsoleApi, Unauthorized } from "./api.js";
import { Command, EventLogModel, isStale, SessionView } from "./model.js";
import { ConsoleUi } from "./ui.js";

const POLL_MS = 1000;

function resolveToken(): string {
  const params = new URLSearchParams(window.location.search);
  const fromUrl = params.get("token");
  if (fromUrl) {
    localStorage.setItem("copresence_token", fromUrl);
    return fromUrl;
  }
  const stored = localStorage.getItem("copresence_token");
  if (stored) return stored;
  const typed = window.prompt("session token (printed by the server at startup)") ?? "";
  localStorage.setItem("copresence_token", typed);
  return typed;
}

function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");

  const api = new ConsoleApi({ baseUrl: window.location.origin, token: resolveToken() });
  const log = new EventLogModel();
  let lastView: SessionView | null = null;
  let lastFetchedAt = 0;

  const ui = new ConsoleUi(root, {
    send(command: Command): void {
      // no optimistic mutation: the next fetch/event reflects the change
      api.sendCommand(command).catch((err) => {
        if (err instanceof Unauthorized) {
          localStorage.removeItem("copresence_token");
          window.location.reload();
        } else if (err instanceof CommandRejected) {
          ui.setBanner(`rejected: ${err.detail}`);
          setTimeout(() => ui.setBanner(null), 4000);
        } else {
          ui.setBanner(String(err));
        }
      });
    },
  });

  const render = () => {
    if (lastView) ui.renderView(lastView, isStale(lastFetchedAt, Date.now()));
    ui.appendEvents(log);
  };

  const poll = async () => {
    try {
      lastView = await api.fetchSession();
      lastFetchedAt = Date.now();
      ui.setBanner(null);
    } catch (err) {
      if (err instanceof Unauthorized) {
        localStorage.removeItem("copresence_token");
        window.location.reload();
        return;
      }
      ui.setBanner("reconnecting...");
    }
    render();
  };

  api.subscribeEvents(
    (event) => {
      log.merge(event);
      render();
    },
    () => ui.setBanner("event stream down, reconnecting..."),
  );

  void poll();
  setInterval(() => void poll(), POLL_MS);
}

boot();

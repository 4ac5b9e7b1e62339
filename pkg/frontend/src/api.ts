// Transport layer: GET /session, POST /command, WS /events.
// Pluggable fetch / WebSocket / clock so tests can drive it against mocks
// or a local mock server; the browser entry point passes the globals.

import { Command, SessionEvent, SessionView } from "./model.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface WebSocketLike {
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: ((err?: unknown) => void) | null;
  close(): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

export class Unauthorized extends Error {
  constructor() {
    super("unauthorized");
  }
}

export class CommandRejected extends Error {
  constructor(readonly detail: string) {
    super(detail); // the server's wording, rendered verbatim
  }
}

export interface ConsoleApiOptions {
  baseUrl: string; // e.g. http://host:port
  token: string;
  fetchImpl?: FetchLike;
  wsFactory?: WebSocketFactory;
}

export class ConsoleApi {
  private baseUrl: string;
  private token: string;
  private fetchImpl: FetchLike;
  private wsFactory: WebSocketFactory;

  constructor(opts: ConsoleApiOptions) {
    this.baseUrl = opts.baseUrl.replace(/\/$/, "");
    this.token = opts.token;
    this.fetchImpl = opts.fetchImpl ?? ((url, init) => fetch(url, init));
    this.wsFactory =
      opts.wsFactory ?? ((url) => new WebSocket(url) as unknown as WebSocketLike);
  }

  private headers(): Record<string, string> {
    return { Authorization: `Bearer ${this.token}` };
  }

  async fetchSession(): Promise<SessionView> {
    const resp = await this.fetchImpl(`${this.baseUrl}/session`, { headers: this.headers() });
    if (resp.status === 401) throw new Unauthorized();
    if (!resp.ok) throw new Error(`GET /session failed: ${resp.status}`);
    return (await resp.json()) as SessionView;
  }

  /**
   * POST one facilitator command. Resolves on acknowledgement; the UI must
   * NOT update any state from this call - the change becomes visible through
   * the next /session fetch or /events message.
   */
  async sendCommand(command: Command): Promise<void> {
    const resp = await this.fetchImpl(`${this.baseUrl}/command`, {
      method: "POST",
      headers: { ...this.headers(), "Content-Type": "application/json" },
      body: JSON.stringify(command),
    });
    if (resp.status === 401) throw new Unauthorized();
    if (!resp.ok) {
      let detail = `HTTP ${resp.status}`;
      try {
        const body = (await resp.json()) as { error?: string };
        if (body.error) detail = body.error;
      } catch {
        /* non-JSON rejection body: keep the status text */
      }
      throw new CommandRejected(detail);
    }
  }

  /**
   * Subscribe to the event stream with automatic reconnect and exponential
   * backoff. Returns a handle whose close() stops reconnecting. onDown is
   * invoked when the socket drops (so the UI can flag a possible gap).
   */
  subscribeEvents(
    onEvent: (event: SessionEvent) => void,
    onDown?: () => void,
    backoffMs: number[] = [250, 500, 1000, 2000, 5000],
    onUp?: () => void,
  ): { close: () => void; ready: Promise<void> } {
    let closed = false;
    let attempt = 0;
    let socket: WebSocketLike | null = null;
    let timer: ReturnType<typeof setTimeout> | null = null;
    let signalReady: () => void = () => {};
    const ready = new Promise<void>((resolve) => {
      signalReady = resolve;
    });

    const wsUrl =
      this.baseUrl.replace(/^http/, "ws") + `/events?token=${encodeURIComponent(this.token)}`;

    const connect = () => {
      if (closed) return;
      socket = this.wsFactory(wsUrl);
      socket.onopen = () => {
        attempt = 0;
        signalReady();
        onUp?.();
      };
      socket.onmessage = (ev) => {
        try {
          onEvent(JSON.parse(String(ev.data)) as SessionEvent);
        } catch {
          /* skip unparseable frames */
        }
      };
      const scheduleRetry = () => {
        if (closed) return;
        onDown?.();
        const delay = backoffMs[Math.min(attempt, backoffMs.length - 1)] ?? 5000;
        attempt += 1;
        timer = setTimeout(connect, delay);
      };
      socket.onclose = scheduleRetry;
      socket.onerror = () => {
        /* onclose follows; avoid double-scheduling */
      };
    };

    connect();
    return {
      ready,
      close: () => {
        closed = true;
        if (timer !== null) clearTimeout(timer);
        socket?.close();
      },
    };
  }
}

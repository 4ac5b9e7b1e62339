// Data shapes mirrored from the server's GET /session payload and the
// WS /events stream, plus the pure state the console keeps client-side.
// The console holds no authoritative state: everything rendered comes from
// these payloads, and commands never mutate the model directly.

export interface RosterRow {
  id: string;
  role: "participant" | "facilitator" | "observer";
  node_index: number | null;
  spectating: boolean;
  last_pose_age_ms: number | null;
  net_verdict: string;
}

export interface CurrentState {
  phase: string;
  name: string;
  index: number;
  elapsed: number;
  duration: number;
  mode: string;
  sequence_index: number;
}

export interface SequenceInfo {
  phase: string;
  states: string[];
}

export type RegistryEntry =
  | { kind: "scalar"; default: number; lo: number; hi: number }
  | { kind: "enum"; default: string; choices: string[] };

export interface SessionView {
  tick: number;
  state: CurrentState | null;
  state_name: string;
  started: boolean;
  sequences: SequenceInfo[];
  overrides: Record<string, number | string>;
  scale: number;
  group_luminosity: number;
  roster: RosterRow[];
  registry: Record<string, RegistryEntry>;
}

export interface SessionEvent {
  event_id: number;
  type: string;
  [key: string]: unknown;
}

export interface Command {
  action: string;
  key?: string | null;
  value?: number | string | boolean | null;
}

/** How old a /session snapshot may get before the UI flags it as stale. */
export const STALE_AFTER_MS = 2000;

export function isStale(fetchedAtMs: number, nowMs: number): boolean {
  return nowMs - fetchedAtMs > STALE_AFTER_MS;
}

/**
 * Ordered, idempotent event log. Reconnects may replay events the console
 * already saw; merging by event_id keeps rows unique, and a jump in ids
 * after a reconnect is surfaced as a gap marker.
 */
export class EventLogModel {
  private seen = new Set<number>();
  readonly entries: SessionEvent[] = [];
  /** event_ids immediately after which events are known to be missing */
  readonly gaps: number[] = [];
  private lastId = 0;

  merge(event: SessionEvent): boolean {
    if (!Number.isFinite(event.event_id) || this.seen.has(event.event_id)) {
      return false;
    }
    this.seen.add(event.event_id);
    if (this.lastId > 0 && event.event_id > this.lastId + 1) {
      this.gaps.push(this.lastId);
    }
    this.lastId = Math.max(this.lastId, event.event_id);
    this.entries.push(event);
    this.entries.sort((a, b) => a.event_id - b.event_id);
    return true;
  }

  /** Latest state-entered event, the timeline cursor's anchor. */
  lastStateEntered(): SessionEvent | null {
    for (let i = this.entries.length - 1; i >= 0; i--) {
      const candidate = this.entries[i];
      if (candidate && candidate.type === "state-entered") return candidate;
    }
    return null;
  }
}

/** Flat ordered list of (phase, state) across all sequences, for the timeline. */
export function timelineStates(sequences: SequenceInfo[]): { phase: string; name: string }[] {
  const out: { phase: string; name: string }[] = [];
  for (const seq of sequences) {
    for (const name of seq.states) out.push({ phase: seq.phase, name });
  }
  return out;
}

/** Index of the active state in the flattened timeline, -1 when not started. */
export function timelineCursor(view: SessionView): number {
  if (!view.started || view.state === null) return -1;
  let offset = 0;
  for (let i = 0; i < view.state.sequence_index; i++) {
    const seq = view.sequences[i];
    offset += seq ? seq.states.length : 0;
  }
  return offset + view.state.index;
}

import { describe, expect, it } from "vitest";

import {
  EventLogModel,
  isStale,
  SessionView,
  timelineCursor,
  timelineStates,
} from "../src/model.js";

function viewWith(partial: Partial<SessionView>): SessionView {
  return {
    tick: 0,
    state: null,
    state_name: "",
    started: false,
    sequences: [],
    overrides: {},
    scale: 1,
    group_luminosity: 0,
    roster: [],
    registry: {},
    ...partial,
  };
}

describe("EventLogModel", () => {
  it("merges events exactly once by id", () => {
    const log = new EventLogModel();
    expect(log.merge({ event_id: 1, type: "joined" })).toBe(true);
    expect(log.merge({ event_id: 2, type: "state-entered" })).toBe(true);
    expect(log.merge({ event_id: 1, type: "joined" })).toBe(false); // replay after reconnect
    expect(log.entries.map((e) => e.event_id)).toEqual([1, 2]);
  });

  it("keeps entries ordered even when delivery is not", () => {
    const log = new EventLogModel();
    log.merge({ event_id: 3, type: "c" });
    log.merge({ event_id: 1, type: "a" });
    log.merge({ event_id: 2, type: "b" });
    expect(log.entries.map((e) => e.type)).toEqual(["a", "b", "c"]);
  });

  it("flags a gap when ids jump after a drop", () => {
    const log = new EventLogModel();
    log.merge({ event_id: 1, type: "a" });
    log.merge({ event_id: 2, type: "b" });
    log.merge({ event_id: 6, type: "f" }); // 3..5 lost while disconnected
    expect(log.gaps).toEqual([2]);
  });

  it("finds the latest state-entered for the timeline cursor", () => {
    const log = new EventLogModel();
    log.merge({ event_id: 1, type: "state-entered", name: "arrival" });
    log.merge({ event_id: 2, type: "joined" });
    log.merge({ event_id: 3, type: "state-entered", name: "bowing" });
    expect(log.lastStateEntered()?.name).toBe("bowing");
  });
});

describe("staleness", () => {
  it("flags views older than two seconds", () => {
    expect(isStale(1000, 2999)).toBe(false);
    expect(isStale(1000, 3001)).toBe(true);
  });
});

describe("timeline", () => {
  const sequences = [
    { phase: "preparation", states: ["arrival", "bowing"] },
    { phase: "journey", states: ["drift"] },
  ];

  it("flattens sequences in order", () => {
    expect(timelineStates(sequences).map((s) => s.name)).toEqual(["arrival", "bowing", "drift"]);
  });

  it("computes the cursor across sequence boundaries", () => {
    const view = viewWith({
      started: true,
      sequences,
      state: {
        phase: "journey",
        name: "drift",
        index: 0,
        elapsed: 1,
        duration: 10,
        mode: "running",
        sequence_index: 1,
      },
    });
    expect(timelineCursor(view)).toBe(2);
  });

  it("is -1 before the script starts", () => {
    expect(timelineCursor(viewWith({ started: false, sequences }))).toBe(-1);
  });
});

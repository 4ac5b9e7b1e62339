// DOM rendering. Everything shown is a projection of the last SessionView
// and the merged event log; controls map 1:1 onto facilitator commands.

import { Command } from "./model.js";
import {
  EventLogModel,
  RegistryEntry,
  SessionView,
  timelineCursor,
  timelineStates,
} from "./model.js";

export interface UiCallbacks {
  send(command: Command): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ConsoleUi {
  private root: HTMLElement;
  private banner: HTMLElement;
  private rosterBody: HTMLElement;
  private timeline: HTMLElement;
  private sliders: HTMLElement;
  private eventLog: HTMLElement;
  private status: HTMLElement;
  private sliderInputs = new Map<string, HTMLInputElement | HTMLSelectElement>();
  private slidersBuilt = false;

  constructor(root: HTMLElement, private callbacks: UiCallbacks) {
    this.root = root;
    this.banner = el("div", "banner hidden");
    this.status = el("div", "status");
    this.rosterBody = el("tbody");
    this.timeline = el("ol", "timeline");
    this.sliders = el("div", "sliders");
    this.eventLog = el("ul", "events");
    this.build();
  }

  private build(): void {
    this.root.append(this.banner, this.status);

    const controls = el("div", "controls");
    for (const [label, command] of [
      ["resume", { action: "resume" }],
      ["hold", { action: "hold" }],
      ["skip", { action: "skip" }],
      ["spectate on", { action: "spectate", value: true }],
      ["spectate off", { action: "spectate", value: false }],
    ] as [string, Command][]) {
      const button = el("button", "cmd", label);
      button.dataset.action = label.replace(" ", "-");
      button.onclick = () => this.callbacks.send(command);
      controls.append(button);
    }
    const scale = el("input") as HTMLInputElement;
    scale.type = "range";
    scale.min = "0.1";
    scale.max = "8";
    scale.step = "0.1";
    scale.dataset.control = "scale";
    scale.onchange = () =>
      this.callbacks.send({ action: "set_scale", value: Number(scale.value) });
    controls.append(el("span", "lbl", "scale"), scale);
    this.root.append(controls);

    const rosterTable = el("table", "roster");
    const head = el("thead");
    const headRow = el("tr");
    for (const h of ["id", "role", "node", "seen", "net", "spectating"]) {
      headRow.append(el("th", undefined, h));
    }
    head.append(headRow);
    rosterTable.append(head, this.rosterBody);
    this.root.append(el("h2", undefined, "roster"), rosterTable);
    this.root.append(el("h2", undefined, "timeline"), this.timeline);
    this.root.append(el("h2", undefined, "hyperparameters"), this.sliders);
    this.root.append(el("h2", undefined, "events"), this.eventLog);
  }

  setBanner(text: string | null): void {
    this.banner.textContent = text ?? "";
    this.banner.classList.toggle("hidden", text === null);
  }

  renderView(view: SessionView, stale: boolean): void {
    const state = view.state
      ? `${view.state.phase}/${view.state.name} ${view.state.elapsed.toFixed(1)}/${view.state.duration.toFixed(1)}s (${view.state.mode})`
      : view.started
        ? view.state_name
        : "not started";
    this.status.textContent =
      `tick ${view.tick} | ${state} | scale ${view.scale} | ` +
      `luminosity ${view.group_luminosity.toFixed(2)}` +
      (stale ? " | STALE" : "");
    this.status.classList.toggle("stale", stale);

    this.rosterBody.replaceChildren(
      ...view.roster.map((row) => {
        const tr = el("tr");
        tr.dataset.participant = row.id;
        const seen =
          row.last_pose_age_ms === null ? "-" : `${Math.round(row.last_pose_age_ms)}ms`;
        for (const cell of [
          row.id,
          row.role,
          row.node_index === null ? "-" : String(row.node_index),
          seen,
          row.net_verdict,
          row.spectating ? "yes" : "no",
        ]) {
          tr.append(el("td", undefined, cell));
        }
        const badge = tr.children[4] as HTMLElement;
        badge.className = `net-${row.net_verdict}`;
        return tr;
      }),
    );

    const cursor = timelineCursor(view);
    this.timeline.replaceChildren(
      ...timelineStates(view.sequences).map((entry, i) => {
        const li = el("li", i === cursor ? "active" : "", `${entry.phase}: ${entry.name}`);
        li.dataset.state = entry.name;
        return li;
      }),
    );

    if (!this.slidersBuilt && Object.keys(view.registry).length > 0) {
      this.buildSliders(view.registry);
      this.slidersBuilt = true;
    }
    this.reflectOverrides(view.overrides);
  }

  /** Controls are generated from the server-sent registry, never hardcoded. */
  private buildSliders(registry: Record<string, RegistryEntry>): void {
    for (const key of Object.keys(registry).sort()) {
      const spec = registry[key];
      if (spec === undefined) continue;
      const row = el("div", "slider-row");
      row.append(el("label", undefined, key));
      if (spec.kind === "scalar") {
        const input = el("input") as HTMLInputElement;
        input.type = "range";
        input.min = String(spec.lo);
        input.max = String(spec.hi);
        input.step = String((spec.hi - spec.lo) / 200);
        input.value = String(spec.default);
        input.dataset.param = key;
        input.onchange = () =>
          this.callbacks.send({ action: "set_override", key, value: Number(input.value) });
        this.sliderInputs.set(key, input);
        row.append(input);
      } else {
        const select = el("select") as HTMLSelectElement;
        for (const choice of spec.choices) {
          const option = el("option", undefined, choice) as HTMLOptionElement;
          option.value = choice;
          select.append(option);
        }
        select.value = spec.default;
        select.dataset.param = key;
        select.onchange = () =>
          this.callbacks.send({ action: "set_override", key, value: select.value });
        this.sliderInputs.set(key, select);
        row.append(select);
      }
      const clear = el("button", "clear", "x");
      clear.onclick = () => this.callbacks.send({ action: "clear_override", key });
      row.append(clear);
      this.sliders.append(row);
    }
  }

  private reflectOverrides(overrides: Record<string, number | string>): void {
    for (const [key, input] of this.sliderInputs) {
      const row = input.parentElement;
      if (row) row.classList.toggle("overridden", key in overrides);
      const value = overrides[key];
      if (value !== undefined) input.value = String(value);
    }
  }

  appendEvents(log: EventLogModel, maxRows = 200): void {
    const rows = log.entries.slice(-maxRows).map((event) => {
      const li = el(
        "li",
        `ev-${event.type}`,
        `#${event.event_id} ${event.type} ${summarize(event)}`,
      );
      li.dataset.eventId = String(event.event_id);
      return li;
    });
    this.eventLog.replaceChildren(...rows);
  }
}

function summarize(event: Record<string, unknown>): string {
  const skip = new Set(["event_id", "type", "ts", "tick", "message", "config"]);
  return Object.entries(event)
    .filter(([k]) => !skip.has(k))
    .map(([k, v]) => `${k}=${String(v)}`)
    .join(" ");
}

/**
 * Panel state as a pure function of the event transcript.
 *
 * `applyEvent` is a reducer: replaying any transcript yields a
 * deterministic PanelModel, which is what the snapshot tests pin. Wall
 *-clock staleness is injected through `receivedAt` so tests can fake time.
 */

import type {
  RegionSummary,
  ServiceEvent,
  Thresholds,
  TripCompleteEvent,
} from "./protocol.js";

export type Connection = "connecting" | "live" | "closed";

export interface LiveBar {
  pressure: number;
  ok: boolean;
  t: number;
}

export interface TripPanel {
  index: number;
  regions: RegionSummary[]; // tip, middle, frog
  valid: boolean;
  /** Invalid trips render as a gap with the previous boxes dimmed. */
  dimmedPrevious: TripPanel | null;
}

export interface DiffBar {
  diff: number | null;
  ok: boolean | null;
  index: number;
}

export interface PanelModel {
  connection: Connection;
  protocol: number | null;
  sessionLabel: string;
  thresholds: Thresholds | null;
  liveBar: LiveBar | null;
  lastTickReceivedAt: number | null; // ms wall clock, staleness input
  boxes: TripPanel | null;
  diffBar: DiffBar | null;
  faults: string[];
  lastEventT: number; // latest sample time seen, ordering guard
  lastTripIndex: number;
  ended: boolean;
  summary: { achievementRate: number | null; improvementRate: number | null } | null;
}

export function initialModel(): PanelModel {
  return {
    connection: "connecting",
    protocol: null,
    sessionLabel: "",
    thresholds: null,
    liveBar: null,
    lastTickReceivedAt: null,
    boxes: null,
    diffBar: null,
    faults: [],
    lastEventT: -Infinity,
    lastTripIndex: -1,
    ended: false,
    summary: null,
  };
}

function tripPanelFrom(event: TripCompleteEvent, previous: TripPanel | null): TripPanel {
  return {
    index: event.index,
    regions: event.regions,
    valid: event.valid,
    dimmedPrevious: event.valid ? null : previous,
  };
}

export function applyEvent(
  model: PanelModel,
  event: ServiceEvent,
  receivedAt: number = 0,
): PanelModel {
  switch (event.kind) {
    case "hello":
      return { ...model, connection: "live", protocol: event.protocol };
    case "snapshot": {
      const next: PanelModel = {
        ...model,
        connection: "live",
        protocol: event.protocol,
        sessionLabel: event.label,
        thresholds: event.thresholds,
      };
      if (event.pressure !== null && event.pressure_ok !== null) {
        next.liveBar = { pressure: event.pressure, ok: event.pressure_ok, t: 0 };
        next.lastTickReceivedAt = receivedAt;
      }
      if (!event.no_data && event.last_trip) {
        next.boxes = tripPanelFrom(event.last_trip, null);
        next.diffBar = {
          diff: event.last_trip.diff,
          ok: event.last_trip.ok,
          index: event.last_trip.index,
        };
        next.lastTripIndex = event.last_trip.index;
      }
      return next;
    }
    case "pressure-tick":
      return {
        ...model,
        liveBar: { pressure: event.pressure, ok: event.ok, t: event.t },
        lastTickReceivedAt: receivedAt,
        lastEventT: Math.max(model.lastEventT, event.t),
      };
    case "trip-complete": {
      // No reordering: a trip never shows ahead of the ticks it summarizes,
      // and trip indices must increase.
      if (event.t > model.lastEventT || event.index <= model.lastTripIndex) {
        return model;
      }
      return {
        ...model,
        boxes: tripPanelFrom(event, model.boxes),
        diffBar: { diff: event.diff, ok: event.ok, index: event.index },
        lastTripIndex: event.index,
      };
    }
    case "fault":
      return { ...model, faults: [...model.faults, `${event.source}: ${event.reason}`] };
    case "session-mark": {
      const next = { ...model };
      if (event.event === "session-start") {
        return {
          ...initialModel(),
          connection: model.connection,
          protocol: model.protocol,
          thresholds: model.thresholds,
          sessionLabel: event.label ?? "",
        };
      }
      if (event.event === "thresholds-changed" && event.floor !== undefined) {
        next.thresholds = {
          floor: event.floor,
          ceiling: event.ceiling ?? model.thresholds?.ceiling ?? 0.17,
        };
      }
      if (event.label !== undefined && event.event !== "session-start") {
        next.sessionLabel = event.label;
      }
      return next;
    }
    case "session-end":
      return {
        ...model,
        ended: true,
        summary: {
          achievementRate: event.achievement_rate,
          improvementRate: event.improvement_rate,
        },
      };
    default:
      return model;
  }
}

export function applyTranscript(
  events: ServiceEvent[],
  receivedAt: number = 0,
): PanelModel {
  let model = initialModel();
  for (const event of events) {
    model = applyEvent(model, event, receivedAt);
  }
  return model;
}

export const STALE_AFTER_MS = 500;

/** True when no tick arrived within the staleness window (bar greys out). */
export function isStale(model: PanelModel, nowMs: number): boolean {
  if (model.lastTickReceivedAt === null) return true;
  return nowMs - model.lastTickReceivedAt > STALE_AFTER_MS;
}

export function markClosed(model: PanelModel): PanelModel {
  return { ...model, connection: "closed" };
}

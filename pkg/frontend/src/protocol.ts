/**
 * Wire protocol of the feedback service: newline-delimited JSON events.
 *
 * The service streams a `hello`, then a `snapshot` (late joiners start from
 * it), then live events. Colors shown by the UI derive only from the `ok`
 * flags on events and the thresholds delivered in the snapshot; the client
 * never re-derives a threshold comparison itself.
 */

export const PROTOCOL_VERSION = 1;

export interface Thresholds {
  floor: number;
  ceiling: number;
}

export interface RegionSummary {
  name: "tip" | "middle" | "frog";
  n: number;
  min: number | null;
  q1: number | null;
  median: number | null;
  q3: number | null;
  max: number | null;
  mean: number | null;
}

export interface HelloEvent {
  kind: "hello";
  protocol: number;
  service: string;
}

export interface SnapshotEvent {
  kind: "snapshot";
  protocol: number;
  label: string;
  thresholds: Thresholds;
  pressure: number | null;
  pressure_ok: boolean | null;
  no_data: boolean;
  last_trip: TripCompleteEvent | null;
  n_trips: number;
}

export interface PressureTickEvent {
  kind: "pressure-tick";
  t: number;
  pressure: number;
  ok: boolean;
}

export interface TripCompleteEvent {
  kind: "trip-complete";
  index: number;
  t: number;
  regions: RegionSummary[]; // tip, middle, frog display order
  diff: number | null;
  ok: boolean | null; // null when the trip is invalid (occluded region)
  valid: boolean;
}

export interface FaultEvent {
  kind: "fault";
  source: string;
  reason: string;
}

export interface SessionMarkEvent {
  kind: "session-mark";
  event: string;
  label?: string;
  floor?: number;
  ceiling?: number;
}

export interface SessionEndEvent {
  kind: "session-end";
  n_samples: number;
  n_trips: number;
  achievement_rate: number | null;
  improvement_rate: number | null;
}

export type ServiceEvent =
  | HelloEvent
  | SnapshotEvent
  | PressureTickEvent
  | TripCompleteEvent
  | FaultEvent
  | SessionMarkEvent
  | SessionEndEvent;

const KINDS = new Set([
  "hello",
  "snapshot",
  "pressure-tick",
  "trip-complete",
  "fault",
  "session-mark",
  "session-end",
]);

/** Parse one NDJSON line; returns null for blank or unknown-kind lines. */
export function parseEventLine(line: string): ServiceEvent | null {
  const trimmed = line.trim();
  if (!trimmed) return null;
  let data: unknown;
  try {
    data = JSON.parse(trimmed);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const kind = (data as { kind?: unknown }).kind;
  if (typeof kind !== "string" || !KINDS.has(kind)) return null;
  return data as ServiceEvent;
}

export function parseTranscript(text: string): ServiceEvent[] {
  const events: ServiceEvent[] = [];
  for (const line of text.split("\n")) {
    const event = parseEventLine(line);
    if (event) events.push(event);
  }
  return events;
}

export interface Command {
  cmd: "start-session" | "stop-session" | "set-thresholds";
  [key: string]: unknown;
}

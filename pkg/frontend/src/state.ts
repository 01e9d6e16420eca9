/**
 * Console-side mission state. The console is never an authority: every FSM
 * value shown comes from telemetry, command rejections only surface a toast,
 * and reconnects deduplicate by telemetry sequence number so the track never
 * doubles up.
 */

import type { Frame, SceneFrame, TelemetryFrame } from "./protocol.js";

export const STALE_AFTER_MS = 2000;

export interface TrackPoint {
  seq: number;
  t: number;
  x: number;
  y: number;
  z: number;
  fsm: string;
}

export interface Toast {
  kind: "rejected" | "error" | "info";
  text: string;
  wallMs: number;
}

export interface LiveState {
  scene: SceneFrame | null;
  latest: TelemetryFrame | null;
  lastSeq: number;
  track: TrackPoint[];
  qSeries: Array<[number, number]>;
  covSeries: Array<[number, number]>;
  pendingCommand: string | null;
  operator: boolean;
  toasts: Toast[];
  lastFrameWallMs: number;
  paused: boolean;
}

export function initialState(): LiveState {
  return {
    scene: null,
    latest: null,
    lastSeq: -1,
    track: [],
    qSeries: [],
    covSeries: [],
    pendingCommand: null,
    operator: false,
    toasts: [],
    lastFrameWallMs: 0,
    paused: true,
  };
}

export function applyFrame(state: LiveState, frame: Frame, wallMs = 0): LiveState {
  state.lastFrameWallMs = wallMs;
  switch (frame.type) {
    case "scene":
      state.scene = frame;
      return state;
    case "role":
      state.operator = frame.operator;
      return state;
    case "telemetry": {
      if (frame.seq <= state.lastSeq) return state; // reconnect duplicate
      state.lastSeq = frame.seq;
      state.latest = frame;
      state.paused = frame.paused ?? false;
      const [x, y, z] = frame.pose;
      state.track.push({ seq: frame.seq, t: frame.t, x, y, z, fsm: frame.fsm });
      if (frame.q !== null && frame.q !== undefined) {
        pushSeries(state.qSeries, frame.t, frame.q);
      }
      pushSeries(state.covSeries, frame.t, frame.coverage);
      return state;
    }
    case "event":
      return applyEvent(state, frame, wallMs);
    default:
      return state;
  }
}

function applyEvent(state: LiveState, frame: { event: string; reason?: string; detail?: string; state?: string }, wallMs: number): LiveState {
  switch (frame.event) {
    case "rejected":
      // Authority stays with the service: show why, change nothing locally.
      state.toasts.push({
        kind: "rejected",
        text: `command rejected: ${frame.reason ?? "unknown"}${frame.detail ? ` (${frame.detail})` : ""}`,
        wallMs,
      });
      state.pendingCommand = null;
      return state;
    case "state":
      state.pendingCommand = null;
      return state;
    case "error":
      state.toasts.push({ kind: "error", text: frame.detail ?? frame.reason ?? "error", wallMs });
      return state;
    case "paused":
      state.paused = true;
      return state;
    case "resumed":
      state.paused = false;
      return state;
    default:
      return state;
  }
}

function pushSeries(series: Array<[number, number]>, t: number, v: number): void {
  const last = series[series.length - 1];
  if (last && last[0] === t) {
    last[1] = v;
    return;
  }
  series.push([t, v]);
}

export function isStale(state: LiveState, nowMs: number): boolean {
  return state.lastFrameWallMs > 0 && nowMs - state.lastFrameWallMs > STALE_AFTER_MS;
}

/** Fig-3 command availability by the telemetry-reported state; the service
 *  still validates every command. */
export function enabledCommands(fsm: string | undefined): Set<string> {
  switch (fsm) {
    case "Hold":
      return new Set(["navigate", "start_mapping", "return"]);
    case "Navigate":
    case "Mapping":
      return new Set(["abort"]);
    case "Abort":
      return new Set(["abort"]); // re-plan from the new segment end
    default:
      return new Set();
  }
}

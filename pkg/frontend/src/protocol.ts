/**
 * Wire protocol shared with the mission service: each frame is the payload
 * byte length in ASCII decimal, a newline, then that many bytes of UTF-8
 * JSON. The decoder is incremental so it can sit on any byte transport
 * (TCP, a WebSocket bridge, or a replay file).
 */

export interface SceneDem {
  ncols: number;
  nrows: number;
  origin: [number, number];
  cellsize: number;
  z_range: [number, number];
  hillshade: number[][];
}

export interface SceneFrame {
  v: number;
  type: "scene";
  dem: SceneDem;
  mask_rle: number[][];
  roi: number[][];
  home: { center: number[]; radius: number; direction: string };
  band: { d_min: number; d_max: number };
}

export interface TelemetryFrame {
  v: number;
  type: "telemetry";
  seq: number;
  t: number;
  pose: [number, number, number, number];
  fsm: string;
  path_id: string;
  q: number | null;
  coverage: number;
  distance_m: number;
  paused?: boolean;
}

export interface EventFrame {
  v: number;
  type: "event";
  event: string;
  reason?: string;
  detail?: string;
  state?: string;
  cmd?: string;
  factor?: number;
}

export interface RoleFrame {
  v: number;
  type: "role";
  operator: boolean;
}

export type Frame = SceneFrame | TelemetryFrame | EventFrame | RoleFrame;

export interface CommandFrame {
  v: number;
  cmd: string;
  goal?: [number, number];
  factor?: number;
}

const encoder = new TextEncoder();
const decoder = new TextDecoder();

export function encodeFrame(obj: CommandFrame | Frame): Uint8Array {
  const payload = encoder.encode(JSON.stringify(obj));
  const head = encoder.encode(`${payload.length}\n`);
  const out = new Uint8Array(head.length + payload.length);
  out.set(head, 0);
  out.set(payload, head.length);
  return out;
}

/** Incremental frame decoder; feed arbitrary byte chunks, collect frames. */
export class FrameDecoder {
  private buf = new Uint8Array(0);

  push(chunk: Uint8Array): Frame[] {
    const merged = new Uint8Array(this.buf.length + chunk.length);
    merged.set(this.buf, 0);
    merged.set(chunk, this.buf.length);
    this.buf = merged;
    const frames: Frame[] = [];
    for (;;) {
      const nl = this.buf.indexOf(0x0a);
      if (nl < 0) break;
      const head = decoder.decode(this.buf.subarray(0, nl));
      const n = Number.parseInt(head.trim(), 10);
      if (!Number.isFinite(n) || n < 0) {
        throw new Error(`bad frame length header: ${head.slice(0, 32)}`);
      }
      if (this.buf.length < nl + 1 + n) break;
      const payload = this.buf.subarray(nl + 1, nl + 1 + n);
      this.buf = this.buf.slice(nl + 1 + n);
      frames.push(JSON.parse(decoder.decode(payload)) as Frame);
    }
    return frames;
  }
}

/** Total valid-mask cells advertised by a scene's run-length encoding. */
export function maskCellCount(scene: SceneFrame): number {
  let total = 0;
  for (const row of scene.mask_rle) {
    for (let i = 1; i < row.length; i += 2) total += row[i];
  }
  return total;
}

// Request/response types and wire framing for the cogs render service.

export interface ServiceInfo {
  gaussian_count: number;
  stage: "dynamic" | "masked" | "controlled" | "finetuned";
  attribute_names: string[];
  attribute_count: number;
  time_range: [number, number];
}

export interface OrbitParams {
  azimuth: number;
  elevation: number;
  radius: number;
  target?: [number, number, number];
  fov_x?: number;
}

// Exactly one of time/controls may be set; the service rejects anything else.
export interface RenderParams {
  time?: number;
  controls?: number[];
  orbit: OrbitParams;
  width: number;
  height: number;
}

const clamp01 = (v: number) => Math.min(1, Math.max(0, v));

/** Clamp values into the service's documented ranges before sending. */
export function sanitizeParams(p: RenderParams, maxDim = 1024): RenderParams {
  const out: RenderParams = {
    orbit: { ...p.orbit },
    width: Math.max(1, Math.min(maxDim, Math.round(p.width))),
    height: Math.max(1, Math.min(maxDim, Math.round(p.height))),
  };
  if (p.controls !== undefined) {
    out.controls = p.controls.map(clamp01);
  } else {
    out.time = clamp01(p.time ?? 0);
  }
  return out;
}

export function renderRequestBody(p: RenderParams, id?: number): string {
  const body: Record<string, unknown> = {
    orbit: p.orbit,
    width: p.width,
    height: p.height,
  };
  if (p.controls !== undefined) body.controls = p.controls;
  else body.time = p.time;
  if (id !== undefined) body.id = id;
  return JSON.stringify(body);
}

export interface StreamFrame {
  id: number;
  ok: boolean;
  error?: string;
  png?: Uint8Array;
}

/** Binary stream frames: 4-byte LE header length, JSON header, PNG bytes. */
export function decodeStreamFrame(data: ArrayBuffer): StreamFrame {
  const view = new DataView(data);
  const headerLen = view.getUint32(0, true);
  const headerBytes = new Uint8Array(data, 4, headerLen);
  const header = JSON.parse(new TextDecoder().decode(headerBytes));
  return {
    id: header.id,
    ok: header.ok,
    png: new Uint8Array(data, 4 + headerLen),
  };
}

export function decodeTextFrame(text: string): StreamFrame {
  const header = JSON.parse(text);
  return { id: header.id, ok: header.ok === true, error: header.error };
}

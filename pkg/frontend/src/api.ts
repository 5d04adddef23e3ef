/** Typed client for the editing service. All coordinates are mm. */

export interface SliceResponse {
  png_base64: string;
  contours: ContourDto[];
  shape: [number, number];
  axes: [number, number];
  spacing_mm: [number, number];
  origin_mm: [number, number];
  plane_mm: number;
  window: [number, number];
}

export interface ContourDto {
  timepoint: number;
  object: number;
  surface: number;
  points: [number, number][];
}

export interface SurfaceDto {
  timepoint: number;
  object: number;
  surface: number;
  k: number[];
  vertices: [number, number, number][];
  triangles: [number, number, number][];
}

export interface SurfacesResponse {
  total_cost: number;
  surfaces: SurfaceDto[];
}

export interface CorrectionRequest {
  x: number;
  y: number;
  z: number;
  object: number;
  surface: number;
  t: number;
  radius: number;
}

export interface CorrectionResponse {
  solution_delta: {
    timepoint: number; object: number; surface: number;
    column: number; old_k: number; new_k: number;
  }[];
  resolve_ms: number;
}

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

async function check<T>(r: Response): Promise<T> {
  if (!r.ok) {
    let code = "http_error";
    let message = r.statusText;
    try {
      const body = await r.json();
      code = body.code ?? code;
      message = body.message ?? message;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(r.status, code, message);
  }
  return r.json() as Promise<T>;
}

export class Client {
  constructor(public base: string = "") {}

  async health(): Promise<{ status: string }> {
    return check(await fetch(`${this.base}/healthz`));
  }

  async getSlice(sessionId: string, axis: number, index: number,
                 wmin: number, wmax: number): Promise<SliceResponse> {
    const q = new URLSearchParams({
      axis: String(axis), index: String(index),
      wmin: String(wmin), wmax: String(wmax),
    });
    return check(await fetch(`${this.base}/sessions/${sessionId}/slice?${q}`));
  }

  async getSurfaces(sessionId: string): Promise<SurfacesResponse> {
    return check(await fetch(`${this.base}/sessions/${sessionId}/surfaces`));
  }

  async postCorrection(sessionId: string, body: CorrectionRequest):
      Promise<CorrectionResponse> {
    return check(await fetch(`${this.base}/sessions/${sessionId}/corrections`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }));
  }

  async undo(sessionId: string): Promise<{ ok: boolean }> {
    return check(await fetch(`${this.base}/sessions/${sessionId}/undo`, {
      method: "POST",
    }));
  }
}

/** Slice viewer and correction loop.
 *
 * Everything drawn comes from the server: the windowed slice PNG plus the
 * per-surface contour polylines of the current optimum. Clicking posts a
 * correction point; the overlay refreshes from the re-solved solution. The
 * page holds no state beyond ViewState, so a reload reproduces the display.
 */

import { ApiError, Client, CorrectionResponse, SliceResponse } from "./api.js";
import {
  ViewState, PlaneGeometry, clickToWorld, contourColor, defaultState,
  mmToPx, planeFromSlice,
} from "./state.js";

export interface Drawable {
  clearRect(x: number, y: number, w: number, h: number): void;
  drawImage(img: CanvasImageSource, x: number, y: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
}

export interface OverlayPolyline {
  object: number;
  surface: number;
  pointsPx: [number, number][];
}

export class SliceView {
  state: ViewState;
  geometry: PlaneGeometry | null = null;
  overlay: OverlayPolyline[] = [];
  planeCoordMm = 0;
  private busy = false;

  constructor(public client: Client, sessionId: string,
              private status: (msg: string) => void = () => {}) {
    this.state = defaultState(sessionId);
  }

  /** Fetch the current slice and rebuild the pixel-space overlay. */
  async refresh(): Promise<SliceResponse> {
    const s = await this.client.getSlice(
      this.state.sessionId, this.state.axis, this.state.index,
      this.state.window[0], this.state.window[1]);
    this.geometry = planeFromSlice(s);
    this.overlay = s.contours
      .filter((c) => c.timepoint === this.state.target.t)
      .map((c) => ({
        object: c.object,
        surface: c.surface,
        pointsPx: c.points.map(([u, v]) => mmToPx(this.geometry!, u, v)),
      }));
    return s;
  }

  /** Post a correction at canvas pixel (x, y); refresh on success. */
  async submitCorrection(xPx: number, yPx: number,
                         planeCoordMm: number): Promise<CorrectionResponse> {
    if (!this.geometry) throw new Error("no slice loaded");
    if (this.busy) throw new Error("a correction is already in flight");
    const [wx, wy, wz] = clickToWorld(this.state, this.geometry,
                                      planeCoordMm, xPx, yPx);
    this.busy = true;
    try {
      const r = await this.client.postCorrection(this.state.sessionId, {
        x: wx, y: wy, z: wz,
        object: this.state.target.object,
        surface: this.state.target.surface,
        t: this.state.target.t,
        radius: this.state.radiusMm,
      });
      this.state.lastCorrectionPx = [xPx, yPx];
      await this.refresh();
      this.status(`re-solved in ${r.resolve_ms.toFixed(0)} ms `
        + `(${r.solution_delta.length} columns moved)`);
      return r;
    } catch (e) {
      if (e instanceof ApiError) {
        this.status(`correction rejected: ${e.code} ${e.message}`);
        throw e;
      }
      this.status(`network error: ${e}`);
      throw e;
    } finally {
      this.busy = false;
    }
  }

  async undo(): Promise<void> {
    await this.client.undo(this.state.sessionId);
    await this.refresh();
    this.status("undone");
  }

  drawOverlay(ctx: Drawable): void {
    for (const poly of this.overlay) {
      ctx.strokeStyle = contourColor(poly.object, poly.surface);
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      poly.pointsPx.forEach(([x, y], i) => {
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      });
      ctx.stroke();
    }
    const cross = this.state.lastCorrectionPx;
    if (cross) {
      ctx.strokeStyle = "#ffffff";
      ctx.lineWidth = 1.0;
      ctx.beginPath();
      ctx.moveTo(cross[0] - 4, cross[1]);
      ctx.lineTo(cross[0] + 4, cross[1]);
      ctx.moveTo(cross[0], cross[1] - 4);
      ctx.lineTo(cross[0], cross[1] + 4);
      ctx.stroke();
    }
  }
}

/** Wire the viewer into the DOM (browser entry point). */
export function mount(root: Document = document): void {
  const canvas = root.getElementById("view") as HTMLCanvasElement;
  const statusEl = root.getElementById("status")!;
  const sessionInput = root.getElementById("session") as HTMLInputElement;
  const axisSel = root.getElementById("axis") as HTMLSelectElement;
  const indexInput = root.getElementById("index") as HTMLInputElement;
  const wminInput = root.getElementById("wmin") as HTMLInputElement;
  const wmaxInput = root.getElementById("wmax") as HTMLInputElement;
  const surfaceSel = root.getElementById("surface") as HTMLSelectElement;
  const objectSel = root.getElementById("object") as HTMLSelectElement;
  const radiusInput = root.getElementById("radius") as HTMLInputElement;
  const undoBtn = root.getElementById("undo") as HTMLButtonElement;
  const loadBtn = root.getElementById("load") as HTMLButtonElement;

  const client = new Client("");
  let view: SliceView | null = null;
  let lastSlice: SliceResponse | null = null;

  const setStatus = (m: string) => { statusEl.textContent = m; };

  async function redraw(): Promise<void> {
    if (!view) return;
    lastSlice = await view.refresh();
    const img = new Image();
    img.onload = () => {
      canvas.width = lastSlice!.shape[0];
      canvas.height = lastSlice!.shape[1];
      const ctx = canvas.getContext("2d")!;
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      ctx.drawImage(img, 0, 0);
      view!.drawOverlay(ctx);
    };
    img.src = `data:image/png;base64,${lastSlice.png_base64}`;
  }

  loadBtn.addEventListener("click", async () => {
    view = new SliceView(client, sessionInput.value.trim(), setStatus);
    view.state.axis = Number(axisSel.value) as 0 | 1 | 2;
    view.state.index = Number(indexInput.value);
    view.state.window = [Number(wminInput.value), Number(wmaxInput.value)];
    view.state.target.surface = Number(surfaceSel.value);
    view.state.target.object = Number(objectSel.value);
    view.state.radiusMm = Number(radiusInput.value);
    try {
      await redraw();
      setStatus("slice loaded");
    } catch (e) {
      setStatus(`load failed: ${e}`);
    }
  });

  for (const el of [axisSel, indexInput, wminInput, wmaxInput]) {
    el.addEventListener("change", async () => {
      if (!view) return;
      view.state.axis = Number(axisSel.value) as 0 | 1 | 2;
      view.state.index = Number(indexInput.value);
      view.state.window = [Number(wminInput.value), Number(wmaxInput.value)];
      await redraw();
    });
  }
  surfaceSel.addEventListener("change", () => {
    if (view) view.state.target.surface = Number(surfaceSel.value);
  });
  objectSel.addEventListener("change", () => {
    if (view) view.state.target.object = Number(objectSel.value);
  });
  radiusInput.addEventListener("change", () => {
    if (view) view.state.radiusMm = Number(radiusInput.value);
  });

  canvas.addEventListener("click", async (ev) => {
    if (!view || !lastSlice) return;
    const rect = canvas.getBoundingClientRect();
    const x = (ev.clientX - rect.left) * (canvas.width / rect.width);
    const y = (ev.clientY - rect.top) * (canvas.height / rect.height);
    const planeCoord = planeCoordOf(view, lastSlice);
    try {
      await view.submitCorrection(x, y, planeCoord);
      await redraw();
    } catch {
      /* status bar already updated; state unchanged */
    }
  });

  undoBtn.addEventListener("click", async () => {
    if (!view) return;
    try {
      await view.undo();
      await redraw();
    } catch (e) {
      setStatus(`undo failed: ${e}`);
    }
  });
}

/** The slice plane's world coordinate along the viewing axis. */
export function planeCoordOf(_view: SliceView, slice: SliceResponse): number {
  return slice.plane_mm;
}

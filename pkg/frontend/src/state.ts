/** View state plus the pixel/mm conversions for the active slice.
 *
 * A slice image's pixel (col, row) shows the voxel at in-plane indices
 * (col, row) over the two remaining axes in ascending order; voxel centers
 * sit at integer pixel coordinates.
 */

import { SliceResponse } from "./api.js";

export interface ViewState {
  sessionId: string;
  axis: 0 | 1 | 2;
  index: number;
  window: [number, number];
  target: { object: number; surface: number; t: number };
  radiusMm: number;
  lastCorrectionPx: [number, number] | null;
}

export function defaultState(sessionId: string): ViewState {
  return {
    sessionId,
    axis: 2,
    index: 0,
    window: [0, 255],
    target: { object: 0, surface: 1, t: 0 },
    radiusMm: 5.0,
    lastCorrectionPx: null,
  };
}

export interface PlaneGeometry {
  axes: [number, number];
  spacingMm: [number, number];
  originMm: [number, number];
  shape: [number, number];
}

export function planeFromSlice(s: SliceResponse): PlaneGeometry {
  return {
    axes: s.axes,
    spacingMm: s.spacing_mm,
    originMm: s.origin_mm,
    shape: s.shape,
  };
}

/** In-plane mm -> pixel coordinates. */
export function mmToPx(g: PlaneGeometry, u: number, v: number): [number, number] {
  return [
    (u - g.originMm[0]) / g.spacingMm[0],
    (v - g.originMm[1]) / g.spacingMm[1],
  ];
}

/** Pixel -> in-plane mm coordinates. */
export function pxToMm(g: PlaneGeometry, x: number, y: number): [number, number] {
  return [
    g.originMm[0] + x * g.spacingMm[0],
    g.originMm[1] + y * g.spacingMm[1],
  ];
}

/** Compose the full 3D mm position of a click on the current slice. */
export function clickToWorld(state: ViewState, g: PlaneGeometry,
                             planeCoordMm: number,
                             xPx: number, yPx: number): [number, number, number] {
  const [u, v] = pxToMm(g, xPx, yPx);
  const out: [number, number, number] = [0, 0, 0];
  out[state.axis] = planeCoordMm;
  out[g.axes[0]] = u;
  out[g.axes[1]] = v;
  return out;
}

export const SURFACE_COLORS = ["#ff5252", "#40c4ff", "#ffd740", "#69f0ae"];

export function contourColor(object: number, surface: number): string {
  return SURFACE_COLORS[(object * 2 + surface) % SURFACE_COLORS.length];
}

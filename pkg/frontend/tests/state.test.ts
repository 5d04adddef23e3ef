import { describe, expect, it } from "vitest";

import {
  clickToWorld, contourColor, defaultState, mmToPx, planeFromSlice, pxToMm,
} from "../src/state.js";
import { SliceResponse } from "../src/api.js";

const slice: SliceResponse = {
  png_base64: "",
  contours: [],
  shape: [96, 64],
  axes: [0, 1],
  spacing_mm: [0.4, 0.4],
  origin_mm: [0, 0],
  plane_mm: 12.0,
  window: [0, 255],
};

describe("plane geometry", () => {
  const g = planeFromSlice(slice);

  it("mm/px round trip", () => {
    const [x, y] = mmToPx(g, 10.0, 4.0);
    expect(x).toBeCloseTo(25.0);
    expect(y).toBeCloseTo(10.0);
    const [u, v] = pxToMm(g, x, y);
    expect(u).toBeCloseTo(10.0);
    expect(v).toBeCloseTo(4.0);
  });

  it("voxel centers land on integer pixels", () => {
    const [x, y] = mmToPx(g, 0.4 * 7, 0.4 * 3);
    expect(x).toBeCloseTo(7);
    expect(y).toBeCloseTo(3);
  });

  it("click composes full world position", () => {
    const state = defaultState("s");
    state.axis = 2;
    const w = clickToWorld(state, g, 12.0, 25.0, 10.0);
    expect(w[0]).toBeCloseTo(10.0);
    expect(w[1]).toBeCloseTo(4.0);
    expect(w[2]).toBeCloseTo(12.0);
  });

  it("axis-0 views map in-plane axes to y and z", () => {
    const g0 = planeFromSlice({ ...slice, axes: [1, 2] as [number, number] });
    const state = defaultState("s");
    state.axis = 0;
    const w = clickToWorld(state, g0, 3.2, 5.0, 6.0);
    expect(w[0]).toBeCloseTo(3.2);
    expect(w[1]).toBeCloseTo(2.0);
    expect(w[2]).toBeCloseTo(2.4);
  });
});

describe("contour colors", () => {
  it("are distinct for the four surfaces", () => {
    const colors = new Set([
      contourColor(0, 0), contourColor(0, 1),
      contourColor(1, 0), contourColor(1, 1),
    ]);
    expect(colors.size).toBe(4);
  });
});

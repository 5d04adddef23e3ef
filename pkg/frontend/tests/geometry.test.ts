import { describe, expect, it } from "vitest";

import { maxDistanceToSegments, sliceMesh } from "./slice_util.js";

describe("test-side mesh slicing", () => {
  // unit tetrahedron around the origin
  const mesh = {
    vertices: [
      [0, 0, -1], [1, 0, 1], [-1, 1, 1], [-1, -1, 1],
    ] as [number, number, number][],
    triangles: [
      [0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2],
    ] as [number, number, number][],
  };

  it("z=0 cut yields segments halfway up the edges", () => {
    const segs = sliceMesh(mesh, 2, 0.0);
    expect(segs.length).toBe(3);
    for (const seg of segs) {
      for (const p of seg) {
        expect(Math.abs(p[0])).toBeLessThanOrEqual(1.0);
      }
    }
  });

  it("distance of on-contour points is zero", () => {
    const segs = sliceMesh(mesh, 2, 0.0);
    const pts = segs.map((s) => s[0]);
    expect(maxDistanceToSegments(pts, segs)).toBeCloseTo(0);
  });

  it("distance grows for off-contour points", () => {
    const segs = sliceMesh(mesh, 2, 0.0);
    expect(maxDistanceToSegments([[5, 5]], segs)).toBeGreaterThan(1.0);
  });
});

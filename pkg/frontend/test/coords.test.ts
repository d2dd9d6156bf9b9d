import { describe, expect, it } from "vitest";

import { canvasToImage, clickToPixel, imageToCanvas, ViewTransform } from "../src/coords";

describe("coordinate transform", () => {
  it("is the identity round trip on integer pixels for zoom 1, 2, 4", () => {
    for (const zoom of [1, 2, 4]) {
      for (const pan of [
        { panX: 0, panY: 0 },
        { panX: 13, panY: -4 },
        { panX: -7.5, panY: 2.25 },
      ]) {
        const t: ViewTransform = { zoom, ...pan };
        for (const [u, v] of [[0, 0], [1, 0], [63, 17], [127, 127]]) {
          const c = imageToCanvas(t, u, v);
          const back = canvasToImage(t, c.x, c.y);
          expect(back.u).toBeCloseTo(u, 9);
          expect(back.v).toBeCloseTo(v, 9);
        }
      }
    }
  });

  it("maps a canvas-center click at zoom 2 on a 128px image to pixel (32, 32)", () => {
    // canvas is 128x128 while the image is shown at zoom 2: the canvas
    // center (64, 64) sits over image point (32, 32)
    const t: ViewTransform = { zoom: 2, panX: 0, panY: 0 };
    expect(clickToPixel(t, 64, 64, 128, 128)).toEqual({ u: 32, v: 32 });
  });

  it("floors to the integer pixel grid", () => {
    const t: ViewTransform = { zoom: 4, panX: 0, panY: 0 };
    expect(clickToPixel(t, 7, 11, 32, 32)).toEqual({ u: 1, v: 2 });
  });

  it("respects pan offsets", () => {
    const t: ViewTransform = { zoom: 2, panX: 10, panY: 5 };
    expect(clickToPixel(t, 0, 0, 64, 64)).toEqual({ u: 10, v: 5 });
    expect(clickToPixel(t, 2, 2, 64, 64)).toEqual({ u: 11, v: 6 });
  });

  it("returns null outside the image rectangle", () => {
    const t: ViewTransform = { zoom: 1, panX: 0, panY: 0 };
    expect(clickToPixel(t, -1, 0, 16, 16)).toBeNull();
    expect(clickToPixel(t, 16, 0, 16, 16)).toBeNull();
    expect(clickToPixel(t, 5, 400, 16, 16)).toBeNull();
  });
});

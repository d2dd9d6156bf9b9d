/** Zoom/pan mapping between image pixels and canvas pixels.
 *
 * canvas = (image - pan) * zoom; a click maps back with the exact inverse
 * and is floored to the integer pixel grid. (0, 0) is the top-left pixel.
 */

export interface ViewTransform {
  zoom: number; // 1, 2, 4, ...
  panX: number; // image-space offset of the canvas origin
  panY: number;
}

export const IDENTITY_VIEW: ViewTransform = { zoom: 1, panX: 0, panY: 0 };

export function imageToCanvas(
  t: ViewTransform,
  u: number,
  v: number,
): { x: number; y: number } {
  return { x: (u - t.panX) * t.zoom, y: (v - t.panY) * t.zoom };
}

export function canvasToImage(
  t: ViewTransform,
  x: number,
  y: number,
): { u: number; v: number } {
  return { u: x / t.zoom + t.panX, v: y / t.zoom + t.panY };
}

/** Integer pixel under a canvas point, or null when outside the image. */
export function clickToPixel(
  t: ViewTransform,
  x: number,
  y: number,
  width: number,
  height: number,
): { u: number; v: number } | null {
  const p = canvasToImage(t, x, y);
  const u = Math.floor(p.u);
  const v = Math.floor(p.v);
  if (u < 0 || v < 0 || u >= width || v >= height) return null;
  return { u, v };
}

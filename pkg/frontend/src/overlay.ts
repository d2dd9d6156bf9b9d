/** Canvas compositing: base image, optional heatmap overlay, keypoint
 * markers, and the heatmap peak crosshair, all in one zoom/pan transform.
 */

import { ViewTransform, imageToCanvas } from "./coords.js";
import { HeatmapPeak, KeypointEntry } from "./api.js";

/** The 2D-context subset we draw with; tests substitute a recorder. */
export interface Ctx2D {
  canvas: { width: number; height: number };
  globalAlpha: number;
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  drawImage(img: Drawable, x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
}

export interface Drawable {
  width: number;
  height: number;
}

export interface Scene {
  image: Drawable;
  overlay: Drawable | null; // heatmap PNG, or null for plain image
  overlayOpacity: number;
  markers: KeypointEntry[]; // drawn only for the displayed image
  imageId: string;
  peak: HeatmapPeak | null;
}

/** Renders the scene; returns a warning string when the overlay was dropped. */
export function render(ctx: Ctx2D, scene: Scene, t: ViewTransform): string | null {
  const { image } = scene;
  ctx.canvas.width = image.width * t.zoom;
  ctx.canvas.height = image.height * t.zoom;
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);

  const origin = imageToCanvas(t, 0, 0);
  const w = image.width * t.zoom;
  const h = image.height * t.zoom;
  ctx.globalAlpha = 1;
  ctx.drawImage(image, origin.x, origin.y, w, h);

  let warning: string | null = null;
  if (scene.overlay && scene.overlayOpacity > 0) {
    if (scene.overlay.width !== image.width || scene.overlay.height !== image.height) {
      warning = `overlay size ${scene.overlay.width}x${scene.overlay.height} does not match image ${image.width}x${image.height}; overlay dropped`;
    } else {
      ctx.globalAlpha = scene.overlayOpacity;
      ctx.drawImage(scene.overlay, origin.x, origin.y, w, h);
      ctx.globalAlpha = 1;
    }
  }

  for (const m of scene.markers) {
    if (m.image_id !== scene.imageId) continue;
    const p = imageToCanvas(t, m.u + 0.5, m.v + 0.5);
    ctx.beginPath();
    ctx.strokeStyle = "#00e676";
    ctx.lineWidth = 2;
    ctx.arc(p.x, p.y, 5, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.fillStyle = "#00e676";
    ctx.font = "12px sans-serif";
    ctx.fillText(m.label, p.x + 7, p.y - 7);
  }

  if (scene.peak && scene.overlay && !warning && scene.overlayOpacity > 0) {
    drawCrosshair(ctx, t, scene.peak.u, scene.peak.v);
  }
  return warning;
}

export function drawCrosshair(ctx: Ctx2D, t: ViewTransform, u: number, v: number): void {
  const p = imageToCanvas(t, u + 0.5, v + 0.5);
  ctx.strokeStyle = "#ff1744";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(p.x - 10, p.y);
  ctx.lineTo(p.x + 10, p.y);
  ctx.moveTo(p.x, p.y - 10);
  ctx.lineTo(p.x, p.y + 10);
  ctx.stroke();
}

/** DOM wiring: builds the page, forwards events to the controller, redraws. */

import { ApiClient } from "./api.js";
import { Controller } from "./state.js";
import { Ctx2D, Drawable, render } from "./overlay.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

function loadBitmap(url: string): Promise<Drawable> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = `${url}&cachebust=${Date.now()}`;
  });
}

export function buildApp(root: HTMLElement, api: ApiClient): Controller {
  const ctl = new Controller(api, loadBitmap);

  const sidebar = el("div", { class: "sidebar" });
  const imageList = el("select", { size: "12", class: "image-list" });
  const dbInput = el("input", { value: ctl.state.dbName, placeholder: "database name" });
  const labelInput = el("input", { placeholder: "next keypoint label" });
  const overlayToggle = el("select");
  overlayToggle.append(el("option", { value: "none" }, "no overlay"), el("option", { value: "heatmap" }, "heatmap"));
  const zoomRow = el("div", { class: "zoom-row" });
  const errorBox = el("div", { class: "error" });
  const entriesBox = el("ul", { class: "entries" });
  sidebar.append(
    el("h1", {}, "descry annotator"),
    el("label", {}, "images"), imageList,
    el("label", {}, "database"), dbInput,
    el("label", {}, "label"), labelInput,
    el("label", {}, "overlay"), overlayToggle,
    zoomRow, errorBox, el("label", {}, "keypoints"), entriesBox,
  );

  const canvasWrap = el("div", { class: "canvas-wrap" });
  const canvas = el("canvas");
  canvasWrap.append(canvas);
  root.append(sidebar, canvasWrap);

  for (const z of [1, 2, 4]) {
    const b = el("button", {}, `${z}x`);
    b.addEventListener("click", () => ctl.setZoom(z));
    zoomRow.append(b);
  }

  const baseImages = new Map<string, Drawable>();
  const ctx = canvas.getContext("2d") as unknown as Ctx2D;

  async function redraw(): Promise<void> {
    const s = ctl.state;
    errorBox.textContent = s.error ?? "";
    imageList.innerHTML = "";
    for (const info of s.images) {
      const opt = el("option", { value: info.id }, `${info.id} (${info.width}x${info.height})`);
      if (s.selectedImage && info.id === s.selectedImage.id) opt.selected = true;
      imageList.append(opt);
    }
    entriesBox.innerHTML = "";
    for (const e of s.entries) {
      const li = el("li", {}, `${e.label} @ (${e.u}, ${e.v}) in ${e.image_id} `);
      const del = el("button", {}, "x");
      del.addEventListener("click", () => void ctl.deleteEntry(e.label));
      li.append(del);
      entriesBox.append(li);
    }
    if (!s.selectedImage) return;
    let base = baseImages.get(s.selectedImage.id);
    if (!base) {
      base = await loadBitmap(`${api.imageUrl(s.selectedImage.id)}?`);
      baseImages.set(s.selectedImage.id, base);
    }
    const warning = render(
      ctx,
      {
        image: base,
        overlay: ctl.overlay,
        overlayOpacity: 0.55,
        markers: s.entries,
        imageId: s.selectedImage.id,
        peak: s.peak,
      },
      s.view,
    );
    if (warning) errorBox.textContent = warning;
  }

  ctl.onChange = () => void redraw();

  imageList.addEventListener("change", () => void ctl.selectImage(imageList.value));
  dbInput.addEventListener("change", () => void ctl.setDb(dbInput.value));
  overlayToggle.addEventListener("change", () =>
    void ctl.setOverlayMode(overlayToggle.value as "none" | "heatmap"),
  );

  let dragging = false;
  let moved = false;
  let last: { x: number; y: number } | null = null;
  canvas.addEventListener("mousedown", (ev) => {
    dragging = true;
    moved = false;
    last = { x: ev.offsetX, y: ev.offsetY };
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (!dragging || !last) return;
    const dx = ev.offsetX - last.x;
    const dy = ev.offsetY - last.y;
    if (Math.abs(dx) + Math.abs(dy) > 2) {
      moved = true;
      ctl.panBy(dx, dy);
      last = { x: ev.offsetX, y: ev.offsetY };
    }
  });
  canvas.addEventListener("mouseup", (ev) => {
    dragging = false;
    if (moved) return; // a drag is a pan, not an annotation
    const label = labelInput.value.trim() || `kp${ctl.state.entries.length + 1}`;
    void ctl.clickAt(ev.offsetX, ev.offsetY, label);
  });

  void ctl.init();
  return ctl;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  buildApp(document.getElementById("app") as HTMLElement, new ApiClient());
}

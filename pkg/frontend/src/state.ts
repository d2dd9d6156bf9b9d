/** UI state machine: image/DB selection, click-to-annotate, overlay refresh.
 *
 * The server's database is the source of truth: after every mutating call
 * the entry mirror and the heatmap overlay are re-fetched, never patched
 * optimistically.
 */

import { ApiClient, ApiError, HeatmapPeak, ImageInfo, KeypointEntry } from "./api.js";
import { ViewTransform, IDENTITY_VIEW, clickToPixel } from "./coords.js";
import { Drawable } from "./overlay.js";

export type OverlayMode = "none" | "heatmap";

export interface UiState {
  images: ImageInfo[];
  selectedImage: ImageInfo | null;
  dbName: string;
  overlayMode: OverlayMode;
  entries: KeypointEntry[];
  peak: HeatmapPeak | null;
  view: ViewTransform;
  error: string | null;
}

/** Loads an overlay bitmap for a heatmap URL; injected so tests stay headless. */
export type OverlayLoader = (url: string) => Promise<Drawable>;

export class Controller {
  state: UiState = {
    images: [],
    selectedImage: null,
    dbName: "grasps",
    overlayMode: "none",
    entries: [],
    peak: null,
    view: { ...IDENTITY_VIEW },
    error: null,
  };
  overlay: Drawable | null = null;
  onChange: () => void = () => {};

  constructor(
    private api: ApiClient,
    private loadOverlay: OverlayLoader,
  ) {}

  async init(): Promise<void> {
    this.state.images = await this.api.listImages();
    await this.refreshMirror();
    if (this.state.images.length > 0) await this.selectImage(this.state.images[0].id);
    this.onChange();
  }

  async selectImage(id: string): Promise<void> {
    const info = this.state.images.find((i) => i.id === id);
    if (!info) return;
    this.state.selectedImage = info;
    this.state.view = { ...IDENTITY_VIEW };
    this.state.error = null;
    await this.refreshOverlay();
    this.onChange();
  }

  setDb(name: string): Promise<void> {
    this.state.dbName = name;
    return this.refreshMirror().then(() => this.refreshOverlay());
  }

  setOverlayMode(mode: OverlayMode): Promise<void> {
    this.state.overlayMode = mode;
    return this.refreshOverlay();
  }

  setZoom(zoom: number): void {
    this.state.view = { ...this.state.view, zoom };
    this.onChange();
  }

  panBy(dxCanvas: number, dyCanvas: number): void {
    const v = this.state.view;
    this.state.view = {
      zoom: v.zoom,
      panX: v.panX - dxCanvas / v.zoom,
      panY: v.panY - dyCanvas / v.zoom,
    };
    this.onChange();
  }

  /** Click on the canvas: convert to integer pixel and annotate. */
  async clickAt(x: number, y: number, label: string): Promise<void> {
    const img = this.state.selectedImage;
    if (!img || !this.state.dbName) return;
    const px = clickToPixel(this.state.view, x, y, img.width, img.height);
    if (px === null) return; // outside the image: no request
    try {
      await this.api.annotate(this.state.dbName, img.id, px.u, px.v, label);
      this.state.error = null;
    } catch (e) {
      this.state.error = e instanceof ApiError ? e.detail : String(e);
      this.onChange();
      return; // mirror unchanged on failure
    }
    await this.refreshMirror();
    await this.refreshOverlay();
  }

  async deleteEntry(label: string): Promise<void> {
    try {
      await this.api.deleteKeypoint(this.state.dbName, label);
      this.state.error = null;
    } catch (e) {
      this.state.error = e instanceof ApiError ? e.detail : String(e);
      this.onChange();
      return;
    }
    await this.refreshMirror();
    await this.refreshOverlay();
  }

  private async refreshMirror(): Promise<void> {
    try {
      const doc = await this.api.getDb(this.state.dbName);
      this.state.entries = doc.entries.map(({ label, image_id, u, v }) => ({
        label,
        image_id,
        u,
        v,
      }));
    } catch (e) {
      if (e instanceof ApiError && e.status === 404) {
        this.state.entries = []; // db not created yet
      } else {
        this.state.error = e instanceof ApiError ? e.detail : String(e);
      }
    }
    this.onChange();
  }

  private async refreshOverlay(): Promise<void> {
    const img = this.state.selectedImage;
    if (!img || this.state.overlayMode !== "heatmap" || this.state.entries.length === 0) {
      this.overlay = null;
      this.state.peak = null;
      this.onChange();
      return;
    }
    try {
      const [bitmap, peak] = await Promise.all([
        this.loadOverlay(this.api.heatmapUrl(this.state.dbName, img.id)),
        this.api.heatmapPeak(this.state.dbName, img.id),
      ]);
      this.overlay = bitmap;
      this.state.peak = peak;
      this.state.error = null;
    } catch (e) {
      this.overlay = null;
      this.state.peak = null;
      this.state.error = e instanceof ApiError ? e.detail : String(e);
    }
    this.onChange();
  }
}

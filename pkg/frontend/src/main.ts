/**
 * Canvas application shell: wires the viewport, brush, layer toggles, and
 * feature editing onto a pair of stacked canvases.
 *
 * Raster layers draw with image smoothing disabled so labelers see exact
 * pixels at any zoom. Vector features and pending labels render on a second
 * canvas above the imagery.
 */

import { DeltaforgeClient, type FeatureRecord } from "./api.js";
import { applyStroke } from "./brush.js";
import { UiSessionState } from "./state.js";
import { Viewport, type ScreenPoint } from "./viewport.js";

export interface AppElements {
  rasterCanvas: HTMLCanvasElement;
  vectorCanvas: HTMLCanvasElement;
  statusLine: HTMLElement;
}

type Tool = "pan" | "brush" | "select";

export class LabelApp {
  readonly viewport = new Viewport();
  private state!: UiSessionState;
  private preview: ImageBitmap | null = null;
  private overlay: ImageBitmap | null = null;
  private features: FeatureRecord[] = [];
  private tool: Tool = "brush";
  private stroke: ScreenPoint[] = [];
  private dragging = false;
  private lastPointer: ScreenPoint = { x: 0, y: 0 };

  constructor(
    private readonly client: DeltaforgeClient,
    private readonly el: AppElements,
  ) {}

  async open(sessionId: string): Promise<void> {
    const info = await this.client.getSession(sessionId);
    this.state = new UiSessionState(info);
    this.viewport.fit(
      info.raster.width,
      info.raster.height,
      this.el.rasterCanvas.width,
      this.el.rasterCanvas.height,
    );
    await this.reloadPreview();
    if (info.has_class_map) await this.reloadOverlay();
    this.features = await this.client.getFeatures(sessionId);
    this.bindEvents();
    this.render();
  }

  setTool(tool: Tool): void {
    this.tool = tool;
  }

  private async reloadPreview(): Promise<void> {
    const data = await this.client.fetchImage(
      this.client.previewUrl(this.state.sessionId),
    );
    this.preview = await createImageBitmap(new Blob([data], { type: "image/png" }));
  }

  private async reloadOverlay(): Promise<void> {
    const data = await this.client.fetchImage(
      this.client.overlayUrl(this.state.sessionId),
    );
    this.overlay = await createImageBitmap(new Blob([data], { type: "image/png" }));
  }

  /** Train then classify, refreshing the overlay; disabled while busy. */
  async trainAndOverlay(model: "svm" | "knn" = "svm"): Promise<void> {
    const status = await this.client.getStatus(this.state.sessionId);
    if (status.busy) {
      this.note(`busy (${status.status}); try again shortly`);
      return;
    }
    const entry = await this.client.train(this.state.sessionId, model);
    this.note(
      `iteration ${entry.iteration}: holdout accuracy ` +
        `${entry.holdout_accuracy ?? "n/a"}`,
    );
    await this.client.classify(this.state.sessionId);
    await this.reloadOverlay();
    this.state.setLayer("overlay", { visible: true });
    this.render();
  }

  private bindEvents(): void {
    const canvas = this.el.vectorCanvas;
    canvas.addEventListener("pointerdown", (ev) => {
      this.dragging = true;
      this.lastPointer = { x: ev.offsetX, y: ev.offsetY };
      if (this.tool === "brush") this.stroke = [this.lastPointer];
    });
    canvas.addEventListener("pointermove", (ev) => {
      if (!this.dragging) return;
      const here = { x: ev.offsetX, y: ev.offsetY };
      if (this.tool === "pan") {
        this.viewport.panByScreenDelta(
          here.x - this.lastPointer.x,
          here.y - this.lastPointer.y,
        );
        this.render();
      } else if (this.tool === "brush") {
        this.stroke.push(here);
        this.render();
      }
      this.lastPointer = here;
    });
    canvas.addEventListener("pointerup", () => {
      this.dragging = false;
      if (this.tool === "brush" && this.stroke.length > 0) {
        void this.finishStroke();
      }
    });
    canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const factor = ev.deltaY < 0 ? 1.25 : 0.8;
      this.viewport.zoomAt({ x: ev.offsetX, y: ev.offsetY }, factor);
      this.render();
    });
  }

  private async finishStroke(): Promise<void> {
    const path = this.stroke;
    this.stroke = [];
    const info = await this.client.getSession(this.state.sessionId);
    try {
      const result = await applyStroke(this.client, this.state, path, this.viewport, {
        width: info.raster.width,
        height: info.raster.height,
      });
      for (const notice of result.skipped) this.note(`skipped: ${notice}`);
    } catch (err) {
      this.note(String(err));
    }
    this.render();
  }

  private note(message: string): void {
    this.el.statusLine.textContent = message;
  }

  render(): void {
    const rctx = this.el.rasterCanvas.getContext("2d");
    const vctx = this.el.vectorCanvas.getContext("2d");
    if (!rctx || !vctx) return;

    rctx.imageSmoothingEnabled = false; // exact pixels, never smoothed
    rctx.clearRect(0, 0, this.el.rasterCanvas.width, this.el.rasterCanvas.height);
    const origin = this.viewport.pixelToScreen({ x: 0, y: 0 });
    for (const [bitmap, layer] of [
      [this.preview, this.state.layers.preview],
      [this.overlay, this.state.layers.overlay],
    ] as const) {
      if (!bitmap || !layer.visible) continue;
      rctx.globalAlpha = layer.opacity;
      rctx.drawImage(
        bitmap,
        origin.x,
        origin.y,
        bitmap.width * this.viewport.zoom,
        bitmap.height * this.viewport.zoom,
      );
    }
    rctx.globalAlpha = 1;

    vctx.clearRect(0, 0, this.el.vectorCanvas.width, this.el.vectorCanvas.height);
    if (this.state.layers.vectors.visible) {
      for (const f of this.features) this.drawFeature(vctx, f);
    }
    if (this.state.layers.labels.visible) this.drawPendingLabels(vctx);
  }

  private drawFeature(ctx: CanvasRenderingContext2D, f: FeatureRecord): void {
    const cls = this.state.classDef(f.class_id);
    const [r, g, b] = cls ? cls.color : [255, 255, 255];
    ctx.strokeStyle = `rgb(${r},${g},${b})`;
    ctx.lineWidth = f.id === this.state.selectedFeatureId ? 3 : 1;
    const rings =
      f.geometry.type === "Polygon"
        ? (f.geometry.coordinates as [number, number][][])
        : [f.geometry.coordinates as [number, number][]];
    for (const ring of rings) {
      ctx.beginPath();
      ring.forEach(([x, y], i) => {
        const s = this.viewport.pixelToScreen({ x, y });
        if (i === 0) ctx.moveTo(s.x, s.y);
        else ctx.lineTo(s.x, s.y);
      });
      ctx.stroke();
    }
  }

  private drawPendingLabels(ctx: CanvasRenderingContext2D): void {
    for (const s of this.state.pendingLabels) {
      const cls = this.state.classDef(s.class);
      if (!cls) continue;
      const [r, g, b] = cls.color;
      ctx.fillStyle = `rgba(${r},${g},${b},0.9)`;
      const p = this.viewport.pixelToScreen({ x: s.col, y: s.row });
      ctx.fillRect(p.x, p.y, this.viewport.zoom, this.viewport.zoom);
    }
  }
}

/** Entry point used by the host page. */
export function mount(
  baseUrl: string,
  sessionId: string,
  elements: AppElements,
): LabelApp {
  const app = new LabelApp(new DeltaforgeClient(baseUrl), elements);
  void app.open(sessionId);
  return app;
}

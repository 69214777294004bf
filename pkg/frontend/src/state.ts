/**
 * Client-side session state: which class is being painted, how big the
 * brush is, which layers are visible, and which labels are queued but not
 * yet posted.
 *
 * All mutation goes through methods so the invariants hold at every point:
 * the active class always exists in the palette and the brush is >= 1 px.
 */

import type { ClassDef, LabelSample, SessionInfo } from "./api.js";

export type LayerName = "preview" | "overlay" | "vectors" | "labels";

export interface LayerSettings {
  visible: boolean;
  /** 0 (transparent) .. 1 (opaque). */
  opacity: number;
}

const DEFAULT_LAYERS: Record<LayerName, LayerSettings> = {
  preview: { visible: true, opacity: 1.0 },
  overlay: { visible: false, opacity: 0.6 },
  vectors: { visible: true, opacity: 1.0 },
  labels: { visible: true, opacity: 1.0 },
};

export class UiSessionState {
  readonly sessionId: string;
  readonly palette: ClassDef[];
  readonly layers: Record<LayerName, LayerSettings>;

  private _activeClassId: number;
  private _brushSize = 1;
  private _pending: LabelSample[] = [];
  private _selectedFeatureId: string | null = null;

  constructor(info: SessionInfo) {
    if (info.palette.length === 0) {
      throw new Error("session palette is empty");
    }
    this.sessionId = info.id;
    this.palette = info.palette.slice();
    this.layers = structuredClone(DEFAULT_LAYERS);
    this._activeClassId = this.palette[0].id;
  }

  get activeClassId(): number {
    return this._activeClassId;
  }

  setActiveClass(classId: number): void {
    if (!this.palette.some((c) => c.id === classId)) {
      throw new RangeError(`class ${classId} is not in the palette`);
    }
    this._activeClassId = classId;
  }

  classDef(classId: number): ClassDef | undefined {
    return this.palette.find((c) => c.id === classId);
  }

  get brushSize(): number {
    return this._brushSize;
  }

  setBrushSize(size: number): void {
    if (!Number.isInteger(size) || size < 1) {
      throw new RangeError(`brush size must be an integer >= 1, got ${size}`);
    }
    this._brushSize = size;
  }

  setLayer(name: LayerName, settings: Partial<LayerSettings>): void {
    const layer = this.layers[name];
    if (settings.opacity !== undefined) {
      if (settings.opacity < 0 || settings.opacity > 1) {
        throw new RangeError(`opacity must be in [0, 1], got ${settings.opacity}`);
      }
      layer.opacity = settings.opacity;
    }
    if (settings.visible !== undefined) layer.visible = settings.visible;
  }

  get selectedFeatureId(): string | null {
    return this._selectedFeatureId;
  }

  selectFeature(featureId: string | null): void {
    this._selectedFeatureId = featureId;
  }

  /** Labels painted locally but not yet accepted by the server. */
  get pendingLabels(): readonly LabelSample[] {
    return this._pending;
  }

  /** Queue a label, replacing any pending label at the same pixel. */
  queueLabel(sample: LabelSample): void {
    this._pending = this._pending.filter(
      (s) => s.row !== sample.row || s.col !== sample.col,
    );
    this._pending.push(sample);
  }

  /** Remove and return the queued labels for posting. */
  drainPending(): LabelSample[] {
    const batch = this._pending;
    this._pending = [];
    return batch;
  }

  /** Put samples back (e.g. after a failed POST) for retry. */
  requeue(samples: LabelSample[]): void {
    for (const s of samples) this.queueLabel(s);
  }

  /**
   * Number of palette classes with at least one committed or pending label.
   * Training is enabled once two classes have samples.
   */
  labeledClassCount(committed: Record<string, number>): number {
    const classes = new Set<number>();
    for (const [id, n] of Object.entries(committed)) {
      if (n > 0) classes.add(Number(id));
    }
    for (const s of this._pending) classes.add(s.class);
    return classes.size;
  }

  trainEnabled(committed: Record<string, number>): boolean {
    return this.labeledClassCount(committed) >= 2;
  }
}

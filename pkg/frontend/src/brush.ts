/**
 * Brush strokes: turn a screen-space pointer path into a batch of labeled
 * raster pixels and post them to the session service.
 *
 * A stroke is sampled densely enough that no pixel along the path is
 * skipped, stamped with a circular brush, de-duplicated, clipped to the
 * raster bounds, and sent as one POST. Pixels the server rejects as nodata
 * are dropped one at a time with a notice, so the rest of the stroke still
 * lands.
 */

import { ApiError, type DeltaforgeClient, type LabelSample } from "./api.js";
import type { UiSessionState } from "./state.js";
import type { ScreenPoint, Viewport } from "./viewport.js";

export interface Cell {
  row: number;
  col: number;
}

export interface RasterBounds {
  width: number;
  height: number;
}

export interface StrokeResult {
  /** Per-class totals returned by the server after the final accepted POST. */
  totals: Record<string, number>;
  /** Pixels accepted by the server. */
  posted: LabelSample[];
  /** Human-readable notices for pixels the server refused (e.g. nodata). */
  skipped: string[];
}

/** Cells covered by a circular brush of the given diameter, centered on a cell. */
export function brushCells(center: Cell, size: number): Cell[] {
  if (!Number.isInteger(size) || size < 1) {
    throw new RangeError(`brush size must be an integer >= 1, got ${size}`);
  }
  const r = (size - 1) / 2;
  const reach = Math.ceil(r);
  const cells: Cell[] = [];
  for (let dr = -reach; dr <= reach; dr++) {
    for (let dc = -reach; dc <= reach; dc++) {
      if (dr * dr + dc * dc <= r * r + 1e-9) {
        cells.push({ row: center.row + dr, col: center.col + dc });
      }
    }
  }
  return cells;
}

/**
 * Map a pointer path to the set of raster cells it paints.
 *
 * Consecutive path points are interpolated in pixel space with sub-pixel
 * steps so fast drags do not leave gaps. Out-of-bounds cells are clipped.
 * The result preserves first-touch order and contains no duplicates.
 */
export function strokeToCells(
  path: ScreenPoint[],
  viewport: Viewport,
  brushSize: number,
  bounds: RasterBounds,
): Cell[] {
  const seen = new Set<number>();
  const cells: Cell[] = [];
  const stamp = (cell: Cell) => {
    for (const c of brushCells(cell, brushSize)) {
      if (c.row < 0 || c.row >= bounds.height) continue;
      if (c.col < 0 || c.col >= bounds.width) continue;
      const key = c.row * bounds.width + c.col;
      if (seen.has(key)) continue;
      seen.add(key);
      cells.push(c);
    }
  };

  const pts = path.map((s) => viewport.screenToPixel(s));
  for (let i = 0; i < pts.length; i++) {
    if (i === 0) {
      stamp({ row: Math.floor(pts[0].y), col: Math.floor(pts[0].x) });
      continue;
    }
    const a = pts[i - 1];
    const b = pts[i];
    const steps = Math.max(
      1,
      Math.ceil(Math.max(Math.abs(b.x - a.x), Math.abs(b.y - a.y)) * 2),
    );
    for (let k = 1; k <= steps; k++) {
      const t = k / steps;
      stamp({
        row: Math.floor(a.y + (b.y - a.y) * t),
        col: Math.floor(a.x + (b.x - a.x) * t),
      });
    }
  }
  return cells;
}

/** Matches the pixel reference in server rejection details, e.g. "(3,7)". */
const PIXEL_RE = /\((\d+)\s*,\s*(\d+)\)/;

/**
 * Post a batch of labels, dropping individual pixels the server rejects.
 *
 * The service validates labels atomically, so a single nodata pixel fails
 * the whole batch with a 400 naming the pixel. We remove that pixel,
 * record a notice, and retry until the batch is accepted or empty.
 */
export async function postLabelBatch(
  client: DeltaforgeClient,
  sessionId: string,
  samples: LabelSample[],
): Promise<StrokeResult> {
  let batch = samples.slice();
  const skipped: string[] = [];
  while (batch.length > 0) {
    try {
      const totals = await client.postLabels(sessionId, batch);
      return { totals, posted: batch, skipped };
    } catch (err) {
      if (!(err instanceof ApiError) || err.status !== 400) throw err;
      const m = PIXEL_RE.exec(err.detail);
      if (!m) throw err; // not a per-pixel rejection; surface it
      const row = Number(m[1]);
      const col = Number(m[2]);
      const next = batch.filter((s) => s.row !== row || s.col !== col);
      if (next.length === batch.length) throw err; // would loop forever
      skipped.push(err.detail);
      batch = next;
    }
  }
  return { totals: {}, posted: [], skipped };
}

/**
 * Paint one stroke: map it through the viewport, label with the active
 * class, flush together with any queued labels, and requeue on transport
 * failure so nothing is lost.
 */
export async function applyStroke(
  client: DeltaforgeClient,
  state: UiSessionState,
  path: ScreenPoint[],
  viewport: Viewport,
  bounds: RasterBounds,
): Promise<StrokeResult> {
  const cells = strokeToCells(path, viewport, state.brushSize, bounds);
  for (const cell of cells) {
    state.queueLabel({ row: cell.row, col: cell.col, class: state.activeClassId });
  }
  const batch = state.drainPending();
  try {
    return await postLabelBatch(client, state.sessionId, batch);
  } catch (err) {
    state.requeue(batch);
    throw err;
  }
}

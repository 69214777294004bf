/**
 * Pan/zoom mapping between screen (CSS pixel) coordinates and raster pixel
 * coordinates.
 *
 * The mapping is a uniform scale plus translation:
 *   screenX = (pixelX - panX) * zoom
 *   screenY = (pixelY - panY) * zoom
 * Pixel coordinates follow the raster convention: (col, row) measured from
 * the top-left corner, so the center of pixel (row, col) sits at
 * (col + 0.5, row + 0.5).
 */

export interface PixelPoint {
  /** Fractional column (x). */
  x: number;
  /** Fractional row (y). */
  y: number;
}

export interface ScreenPoint {
  x: number;
  y: number;
}

export const MIN_ZOOM = 1 / 64;
export const MAX_ZOOM = 256;

export class Viewport {
  constructor(
    public zoom = 1,
    public panX = 0,
    public panY = 0,
  ) {
    if (!(zoom > 0)) throw new RangeError(`zoom must be positive, got ${zoom}`);
  }

  pixelToScreen(p: PixelPoint): ScreenPoint {
    return {
      x: (p.x - this.panX) * this.zoom,
      y: (p.y - this.panY) * this.zoom,
    };
  }

  screenToPixel(s: ScreenPoint): PixelPoint {
    return {
      x: s.x / this.zoom + this.panX,
      y: s.y / this.zoom + this.panY,
    };
  }

  /** Integer (row, col) of the raster pixel under a screen position. */
  screenToCell(s: ScreenPoint): { row: number; col: number } {
    const p = this.screenToPixel(s);
    return { row: Math.floor(p.y), col: Math.floor(p.x) };
  }

  /** Pan by a screen-space delta (e.g. a mouse drag). */
  panByScreenDelta(dx: number, dy: number): void {
    this.panX -= dx / this.zoom;
    this.panY -= dy / this.zoom;
  }

  /**
   * Multiply the zoom by `factor`, keeping the raster point under the given
   * screen anchor stationary. The zoom is clamped to [MIN_ZOOM, MAX_ZOOM].
   */
  zoomAt(anchor: ScreenPoint, factor: number): void {
    const before = this.screenToPixel(anchor);
    this.zoom = Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, this.zoom * factor));
    const after = this.screenToPixel(anchor);
    this.panX += before.x - after.x;
    this.panY += before.y - after.y;
  }

  /** Center the viewport on a raster extent within a screen-sized frame. */
  fit(width: number, height: number, frameW: number, frameH: number): void {
    const zoom = Math.min(frameW / width, frameH / height);
    this.zoom = Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, zoom));
    this.panX = width / 2 - frameW / (2 * this.zoom);
    this.panY = height / 2 - frameH / (2 * this.zoom);
  }

  clone(): Viewport {
    return new Viewport(this.zoom, this.panX, this.panY);
  }
}

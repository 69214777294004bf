/**
 * Typed HTTP client for the deltaforge session service.
 *
 * This module is the only place network requests are made from; every call
 * maps one-to-one onto a documented endpoint of the JSON-over-HTTP API.
 * The fetch implementation is injectable so tests can run against a mock
 * transport and assert the exact wire traffic.
 */

export type Rgb = [number, number, number];

export interface ClassDef {
  id: number;
  name: string;
  color: Rgb;
  parent_id: number | null;
}

export interface RasterInfo {
  path: string;
  width: number;
  height: number;
  bands: number;
  crs: Record<string, unknown>;
  geotransform: number[];
}

export interface SessionInfo {
  id: string;
  raster: RasterInfo;
  palette: ClassDef[];
  label_counts: Record<string, number>;
  iterations: IterationEntry[];
  has_model: boolean;
  has_class_map: boolean;
  feature_count: number;
  status: string;
}

export interface IterationEntry {
  iteration: number;
  model: string;
  sample_counts: Record<string, number>;
  holdout_accuracy: number | null;
}

export interface LabelSample {
  row: number;
  col: number;
  class: number;
}

export interface SessionStatus {
  status: string;
  busy: boolean;
}

/** GeoJSON-style geometry as stored by the service (pixel coordinates). */
export interface Geometry {
  type: "Point" | "LineString" | "Polygon";
  coordinates: unknown;
}

export type FeatureStage = "auto" | "edited" | "validated";

export interface FeatureRecord {
  id: string;
  kind: "polygon" | "skeleton" | "point";
  class_id: number;
  geometry: Geometry;
  bbox: [number, number, number, number];
  stage: FeatureStage;
  version: number;
  parent_version: number | null;
  created_at: string;
  lossy_simplified: boolean;
}

export interface FeatureQuery {
  /** Pixel-space bounding box [x0, y0, x1, y1]. */
  bbox?: [number, number, number, number];
  classIds?: number[];
  stage?: FeatureStage[];
}

export interface VectorizeOptions {
  epsilon?: number;
  skeleton?: boolean;
  min_pixels?: number;
}

export type ExportFormat = "osm" | "geojson" | "snapshot";

export interface ExportResult {
  filename: string;
  contentType: string;
  data: ArrayBuffer;
}

/** Error raised for any non-2xx response, carrying the server's detail. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
    public readonly method: string,
    public readonly path: string,
  ) {
    super(`${method} ${path} -> ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

async function raiseForStatus(
  resp: Response,
  method: string,
  path: string,
): Promise<void> {
  if (resp.ok) return;
  let detail = resp.statusText;
  try {
    const body = (await resp.json()) as { detail?: unknown };
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(resp.status, detail, method, path);
}

export class DeltaforgeClient {
  private readonly fetchImpl: FetchLike;

  constructor(
    public readonly baseUrl: string,
    fetchImpl?: FetchLike,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async requestJson<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    await raiseForStatus(resp, method, path);
    return (await resp.json()) as T;
  }

  async createSession(
    rasterPath: string,
    palette: ClassDef[] | string,
    config?: Record<string, unknown>,
  ): Promise<SessionInfo> {
    return this.requestJson<SessionInfo>("POST", "/sessions", {
      raster_path: rasterPath,
      palette,
      ...(config ? { config } : {}),
    });
  }

  async getSession(id: string): Promise<SessionInfo> {
    return this.requestJson<SessionInfo>("GET", `/sessions/${id}`);
  }

  async getStatus(id: string): Promise<SessionStatus> {
    return this.requestJson<SessionStatus>("GET", `/sessions/${id}/status`);
  }

  /** URL for the stretched RGB preview; suitable as an <img> src. */
  previewUrl(id: string, bands?: number[], stretch?: [number, number]): string {
    const params = new URLSearchParams();
    if (bands) params.set("bands", bands.join(","));
    if (stretch) params.set("stretch", stretch.join(","));
    const qs = params.toString();
    return `${this.baseUrl}/sessions/${id}/preview.png${qs ? "?" + qs : ""}`;
  }

  /** URL for the class overlay (palette colors, nodata transparent). */
  overlayUrl(id: string): string {
    return `${this.baseUrl}/sessions/${id}/overlay.png`;
  }

  async fetchImage(url: string): Promise<ArrayBuffer> {
    const resp = await this.fetchImpl(url, { method: "GET" });
    await raiseForStatus(resp, "GET", url);
    return resp.arrayBuffer();
  }

  async getLabels(id: string): Promise<LabelSample[]> {
    const body = await this.requestJson<{ samples: LabelSample[] }>(
      "GET",
      `/sessions/${id}/labels`,
    );
    return body.samples;
  }

  async postLabels(
    id: string,
    samples: LabelSample[],
  ): Promise<Record<string, number>> {
    const body = await this.requestJson<{ totals: Record<string, number> }>(
      "POST",
      `/sessions/${id}/labels`,
      { samples },
    );
    return body.totals;
  }

  async train(id: string, model: "svm" | "knn"): Promise<IterationEntry> {
    return this.requestJson<IterationEntry>("POST", `/sessions/${id}/train`, {
      model,
    });
  }

  async classify(
    id: string,
    workers = 1,
  ): Promise<{ pixel_counts: Record<string, number> }> {
    return this.requestJson("POST", `/sessions/${id}/classify`, { workers });
  }

  async vectorize(
    id: string,
    options: VectorizeOptions = {},
  ): Promise<{ inserted: number; skipped_small: number }> {
    return this.requestJson("POST", `/sessions/${id}/vectorize`, options);
  }

  async getFeatures(
    id: string,
    query: FeatureQuery = {},
  ): Promise<FeatureRecord[]> {
    const params = new URLSearchParams();
    if (query.bbox) params.set("bbox", query.bbox.join(","));
    if (query.classIds && query.classIds.length > 0) {
      params.set("class", query.classIds.join(","));
    }
    if (query.stage && query.stage.length > 0) {
      params.set("stage", query.stage.join(","));
    }
    const qs = params.toString();
    const body = await this.requestJson<{ features: FeatureRecord[] }>(
      "GET",
      `/sessions/${id}/features${qs ? "?" + qs : ""}`,
    );
    return body.features;
  }

  async patchFeature(
    id: string,
    featureId: string,
    patch: { geometry?: Geometry; stage?: FeatureStage },
  ): Promise<FeatureRecord> {
    return this.requestJson<FeatureRecord>(
      "PATCH",
      `/sessions/${id}/features/${featureId}`,
      patch,
    );
  }

  async exportFile(
    id: string,
    format: ExportFormat,
    includeUnvalidated = false,
  ): Promise<ExportResult> {
    const path = `/sessions/${id}/export`;
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        format,
        include_unvalidated: includeUnvalidated,
      }),
    });
    await raiseForStatus(resp, "POST", path);
    const disposition = resp.headers.get("content-disposition") ?? "";
    const match = /filename="([^"]+)"/.exec(disposition);
    return {
      filename: match ? match[1] : `export.${format}`,
      contentType: resp.headers.get("content-type") ?? "application/octet-stream",
      data: await resp.arrayBuffer(),
    };
  }
}

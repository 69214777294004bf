/**
 * Vertex-level geometry editing for stored features.
 *
 * Edits are pure: each operation returns a new geometry or a rejection
 * reason, never mutating the input. Rings are validated client-side (closed,
 * enough vertices, simple) before anything is sent; the server re-validates,
 * and nothing is adopted locally without a 2xx response.
 */

import type { DeltaforgeClient, FeatureRecord, Geometry } from "./api.js";

export type Position = [number, number];

export interface VertexRef {
  /** Ring index for polygons (0 = exterior); always 0 for linestrings. */
  ring: number;
  /** Vertex index within the ring, excluding the closing duplicate. */
  vertex: number;
}

export type EditResult =
  | { ok: true; geometry: Geometry }
  | { ok: false; reason: string };

/** Minimum distinct vertices in a polygon ring (a triangle). */
export const MIN_RING_VERTICES = 3;

function isClosed(ring: Position[]): boolean {
  if (ring.length < 2) return false;
  const [x0, y0] = ring[0];
  const [xn, yn] = ring[ring.length - 1];
  return x0 === xn && y0 === yn;
}

/** Ring without its closing duplicate. */
function openRing(ring: Position[]): Position[] {
  return isClosed(ring) ? ring.slice(0, -1) : ring.slice();
}

function closeRing(vertices: Position[]): Position[] {
  return [...vertices, vertices[0]];
}

function segmentsIntersect(
  a: Position, b: Position, c: Position, d: Position,
): boolean {
  const cross = (o: Position, p: Position, q: Position) =>
    (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0]);
  const d1 = cross(c, d, a);
  const d2 = cross(c, d, b);
  const d3 = cross(a, b, c);
  const d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  const onSegment = (o: Position, p: Position, q: Position) =>
    Math.min(o[0], p[0]) <= q[0] && q[0] <= Math.max(o[0], p[0]) &&
    Math.min(o[1], p[1]) <= q[1] && q[1] <= Math.max(o[1], p[1]);
  if (d1 === 0 && onSegment(c, d, a)) return true;
  if (d2 === 0 && onSegment(c, d, b)) return true;
  if (d3 === 0 && onSegment(a, b, c)) return true;
  if (d4 === 0 && onSegment(a, b, d)) return true;
  return false;
}

/**
 * True when no two non-adjacent edges of the closed ring touch. Adjacent
 * edges share exactly their common endpoint by construction.
 */
export function ringIsSimple(vertices: Position[]): boolean {
  const n = vertices.length;
  if (n < MIN_RING_VERTICES) return false;
  for (let i = 0; i < n; i++) {
    const a = vertices[i];
    const b = vertices[(i + 1) % n];
    if (a[0] === b[0] && a[1] === b[1]) return false; // degenerate edge
    for (let j = i + 1; j < n; j++) {
      const adjacent = j === i + 1 || (i === 0 && j === n - 1);
      if (adjacent) continue;
      const c = vertices[j];
      const d = vertices[(j + 1) % n];
      if (segmentsIntersect(a, b, c, d)) return false;
    }
  }
  return true;
}

function polygonRings(geometry: Geometry): Position[][] {
  return geometry.coordinates as Position[][];
}

function lineCoords(geometry: Geometry): Position[] {
  return geometry.coordinates as Position[];
}

function rebuildPolygon(
  geometry: Geometry,
  ringIndex: number,
  vertices: Position[],
): EditResult {
  if (!ringIsSimple(vertices)) {
    return { ok: false, reason: "edit would make the ring self-intersect" };
  }
  const rings = polygonRings(geometry).map((r, i) =>
    i === ringIndex ? closeRing(vertices) : r.map((p) => [...p] as Position),
  );
  return { ok: true, geometry: { type: "Polygon", coordinates: rings } };
}

function getVertices(geometry: Geometry, at: VertexRef): Position[] | string {
  if (geometry.type === "Polygon") {
    const rings = polygonRings(geometry);
    if (at.ring < 0 || at.ring >= rings.length) {
      return `ring ${at.ring} out of range`;
    }
    return openRing(rings[at.ring]);
  }
  if (geometry.type === "LineString") {
    if (at.ring !== 0) return "linestrings have a single part";
    return lineCoords(geometry).map((p) => [...p] as Position);
  }
  return `cannot vertex-edit a ${geometry.type}`;
}

function rebuild(
  geometry: Geometry,
  at: VertexRef,
  vertices: Position[],
): EditResult {
  if (geometry.type === "Polygon") {
    if (vertices.length < MIN_RING_VERTICES) {
      return {
        ok: false,
        reason: `a ring needs at least ${MIN_RING_VERTICES} vertices`,
      };
    }
    return rebuildPolygon(geometry, at.ring, vertices);
  }
  if (vertices.length < 2) {
    return { ok: false, reason: "a line needs at least 2 vertices" };
  }
  return { ok: true, geometry: { type: "LineString", coordinates: vertices } };
}

export function moveVertex(
  geometry: Geometry,
  at: VertexRef,
  to: Position,
): EditResult {
  const vertices = getVertices(geometry, at);
  if (typeof vertices === "string") return { ok: false, reason: vertices };
  if (at.vertex < 0 || at.vertex >= vertices.length) {
    return { ok: false, reason: `vertex ${at.vertex} out of range` };
  }
  const next = vertices.slice();
  next[at.vertex] = [to[0], to[1]];
  return rebuild(geometry, at, next);
}

/** Insert a new vertex after `at.vertex`, typically at an edge midpoint. */
export function insertVertex(
  geometry: Geometry,
  at: VertexRef,
  position: Position,
): EditResult {
  const vertices = getVertices(geometry, at);
  if (typeof vertices === "string") return { ok: false, reason: vertices };
  if (at.vertex < 0 || at.vertex >= vertices.length) {
    return { ok: false, reason: `vertex ${at.vertex} out of range` };
  }
  const next = vertices.slice();
  next.splice(at.vertex + 1, 0, [position[0], position[1]]);
  return rebuild(geometry, at, next);
}

export function deleteVertex(geometry: Geometry, at: VertexRef): EditResult {
  const vertices = getVertices(geometry, at);
  if (typeof vertices === "string") return { ok: false, reason: vertices };
  if (at.vertex < 0 || at.vertex >= vertices.length) {
    return { ok: false, reason: `vertex ${at.vertex} out of range` };
  }
  const next = vertices.slice();
  next.splice(at.vertex, 1);
  return rebuild(geometry, at, next);
}

/**
 * Send an accepted edit to the server and return its authoritative record.
 * The caller should render from the returned feature, not the local draft.
 */
export async function commitEdit(
  client: DeltaforgeClient,
  sessionId: string,
  featureId: string,
  result: EditResult,
): Promise<FeatureRecord> {
  if (!result.ok) throw new Error(`rejected client-side: ${result.reason}`);
  return client.patchFeature(sessionId, featureId, {
    geometry: result.geometry,
    stage: "edited",
  });
}

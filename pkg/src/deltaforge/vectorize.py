"""Classified pixels -> points, connected components, boundary polygons,
Douglas-Peucker simplification and medial skeletons.

Geometry lives in pixel-corner coordinates: pixel (r, c) occupies the unit
square [c, c+1] x [r, r+1] and ring vertices are (x=col, y=row) integers until
simplification. Boundary rings are traced with the component interior on the
left, which makes exterior rings come out with positive shoelace area and
holes negative, and makes |area| bookkeeping exact in integer arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NoSuchComponent, SingularTransform, UnknownCrs
from .georef import AffineTransform, CrsId, apply_affine, utm_to_wgs84
from .classify import ClassMap

Vertex = Tuple[float, float]
Ring = List[Vertex]  # closed: first vertex repeated last


@dataclass(frozen=True)
class PixelPoint:
    row: int
    col: int
    class_id: int


@dataclass(frozen=True)
class ComponentInfo:
    class_id: int
    pixel_count: int
    bbox: Tuple[int, int, int, int]  # (rmin, cmin, rmax, cmax) inclusive


@dataclass
class ComponentLabeling:
    labels: np.ndarray  # H x W int32, 0 = background
    table: Dict[int, ComponentInfo]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass
class FeaturePolygon:
    component_id: int
    class_id: int
    exterior: Ring
    holes: List[Ring] = field(default_factory=list)


@dataclass
class SkeletonGraph:
    nodes: List[Tuple[int, int]]            # (row, col) pixel centers
    edges: List[List[Tuple[int, int]]]      # chains of (row, col) between nodes
    pixels: set                             # all skeleton pixels


def to_points(class_map: ClassMap) -> Iterator[PixelPoint]:
    """Every classified pixel as a point, row-major order."""
    rows, cols = np.nonzero(class_map.classes)
    for r, c in zip(rows.tolist(), cols.tolist()):
        yield PixelPoint(r, c, int(class_map.classes[r, c]))


def label_components(class_map: ClassMap) -> ComponentLabeling:
    """Two-pass union-find labeling of 4-connected same-class runs.

    Component ids are dense 1..K in order of first row-major pixel.
    """
    grid = class_map.classes
    h, w = grid.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent: List[int] = [0]  # union-find, index 0 unused

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb

    next_label = 1
    for r in range(h):
        row = grid[r]
        lab_row = labels[r]
        for c in range(w):
            cls = row[c]
            if cls == 0:
                continue
            up = labels[r - 1, c] if r > 0 and grid[r - 1, c] == cls else 0
            left = lab_row[c - 1] if c > 0 and row[c - 1] == cls else 0
            if up and left:
                lab_row[c] = min(up, left)
                union(up, left)
            elif up or left:
                lab_row[c] = up or left
            else:
                parent.append(next_label)
                lab_row[c] = next_label
                next_label += 1

    # Second pass: resolve to roots, then compact to dense ids ordered by
    # first row-major appearance.
    remap: Dict[int, int] = {}
    table: Dict[int, ComponentInfo] = {}
    mins: Dict[int, List[int]] = {}
    for r in range(h):
        lab_row = labels[r]
        for c in range(w):
            lab = lab_row[c]
            if lab == 0:
                continue
            root = find(int(lab))
            cid = remap.get(root)
            if cid is None:
                cid = len(remap) + 1
                remap[root] = cid
            lab_row[c] = cid
            info = mins.get(cid)
            if info is None:
                mins[cid] = [int(grid[r, c]), 1, r, c, r, c]
            else:
                info[1] += 1
                info[2] = min(info[2], r)
                info[3] = min(info[3], c)
                info[4] = max(info[4], r)
                info[5] = max(info[5], c)
    for cid, (cls, count, rmin, cmin, rmax, cmax) in mins.items():
        table[cid] = ComponentInfo(cls, count, (rmin, cmin, rmax, cmax))
    return ComponentLabeling(labels, table)


def shoelace_area2(ring: Sequence[Vertex]) -> float:
    """Twice the signed shoelace area (exact for integer vertices)."""
    total = 0.0
    for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
        total += x1 * y2 - x2 * y1
    return total


def _edge_dir(a: Vertex, b: Vertex) -> Tuple[int, int]:
    return (int(b[0] - a[0]), int(b[1] - a[1]))


def trace_boundaries(
    labeling: ComponentLabeling, component_id: int
) -> Tuple[Ring, List[Ring]]:
    """Exterior ring + hole rings of one component, interior kept on the left.

    At pinch corners where four boundary edges meet, the incoming edge pairs
    with the clockwise-turning outgoing edge; this is the non-crossing pairing
    and keeps every ring simple.
    """
    info = labeling.table.get(component_id)
    if info is None:
        raise NoSuchComponent(f"component {component_id} does not exist")
    rmin, cmin, rmax, cmax = info.bbox
    sub = labeling.labels[rmin:rmax + 1, cmin:cmax + 1] == component_id
    padded = np.zeros((sub.shape[0] + 2, sub.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = sub

    # Directed boundary edges keyed by start vertex (absolute corner coords).
    edges: List[Tuple[Vertex, Vertex]] = []
    rows, cols = np.nonzero(sub)
    for rr, cc in zip(rows.tolist(), cols.tolist()):
        r, c = rr + rmin, cc + cmin
        pr, pc = rr + 1, cc + 1  # padded indices
        if not padded[pr - 1, pc]:
            edges.append(((c, r), (c + 1, r)))
        if not padded[pr, pc + 1]:
            edges.append(((c + 1, r), (c + 1, r + 1)))
        if not padded[pr + 1, pc]:
            edges.append(((c + 1, r + 1), (c, r + 1)))
        if not padded[pr, pc - 1]:
            edges.append(((c, r + 1), (c, r)))

    incoming: Dict[Vertex, List[int]] = {}
    outgoing: Dict[Vertex, List[int]] = {}
    for i, (a, b) in enumerate(edges):
        outgoing.setdefault(a, []).append(i)
        incoming.setdefault(b, []).append(i)

    successor = [0] * len(edges)
    for v, outs in outgoing.items():
        ins = incoming[v]
        if len(ins) == 1:
            successor[ins[0]] = outs[0]
        else:
            # Pinch corner: 2 in / 2 out. Pair incoming with the outgoing
            # whose turn has negative cross product (stays non-crossing).
            for ei in ins:
                din = _edge_dir(*edges[ei])
                for eo in outs:
                    dout = _edge_dir(*edges[eo])
                    if din[0] * dout[1] - din[1] * dout[0] < 0:
                        successor[ei] = eo
                        break

    # Extract cycles deterministically: start from smallest unvisited edge.
    order = sorted(range(len(edges)), key=lambda i: edges[i])
    visited = [False] * len(edges)
    rings: List[Ring] = []
    for start in order:
        if visited[start]:
            continue
        chain: List[Vertex] = []
        e = start
        while not visited[e]:
            visited[e] = True
            chain.append(edges[e][0])
            e = successor[e]
        ring = _normalize_ring(chain)
        rings.append(ring)

    exterior = None
    holes: List[Ring] = []
    for ring in rings:
        if shoelace_area2(ring) > 0:
            if exterior is not None:
                raise AssertionError("multiple exterior rings for one component")
            exterior = ring
        else:
            holes.append(ring)
    assert exterior is not None
    holes.sort(key=lambda h: h[0])
    return exterior, holes


def _normalize_ring(chain: List[Vertex]) -> Ring:
    """Merge collinear runs, rotate start to the smallest vertex, close."""
    n = len(chain)
    keep: List[Vertex] = []
    for i in range(n):
        prev = chain[(i - 1) % n]
        cur = chain[i]
        nxt = chain[(i + 1) % n]
        cross = (cur[0] - prev[0]) * (nxt[1] - cur[1]) - (cur[1] - prev[1]) * (nxt[0] - cur[0])
        straight = cross == 0 and (
            (cur[0] - prev[0]) * (nxt[0] - cur[0]) + (cur[1] - prev[1]) * (nxt[1] - cur[1])
        ) > 0
        if not straight:
            keep.append(cur)
    k = keep.index(min(keep))
    rotated = keep[k:] + keep[:k]
    rotated.append(rotated[0])
    return rotated


def polygonize(labeling: ComponentLabeling) -> List[FeaturePolygon]:
    out = []
    for cid in sorted(labeling.table):
        exterior, holes = trace_boundaries(labeling, cid)
        out.append(FeaturePolygon(
            component_id=cid,
            class_id=labeling.table[cid].class_id,
            exterior=exterior,
            holes=holes,
        ))
    return out


# --- Douglas-Peucker -------------------------------------------------------

def _point_segment_dist2(p: Vertex, a: Vertex, b: Vertex) -> float:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    ln = dx * dx + dy * dy
    if ln == 0:
        return (p[0] - ax) ** 2 + (p[1] - ay) ** 2
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / ln
    t = max(0.0, min(1.0, t))
    qx, qy = ax + t * dx, ay + t * dy
    return (p[0] - qx) ** 2 + (p[1] - qy) ** 2


def _dp_open(points: Sequence[Vertex], eps2: float) -> List[Vertex]:
    n = len(points)
    if n <= 2:
        return list(points)
    keep = [False] * n
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        best, best_d = -1, eps2
        a, b = points[i], points[j]
        for k in range(i + 1, j):
            d = _point_segment_dist2(points[k], a, b)
            if d > best_d:
                best, best_d = k, d
        if best >= 0:
            keep[best] = True
            stack.append((i, best))
            stack.append((best, j))
    return [p for p, k in zip(points, keep) if k]


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper intersection test (shared endpoints do not count)."""
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return int(v > 0) - int(v < 0)

    if p1 in (p3, p4) or p2 in (p3, p4):
        return False
    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))
    if o1 == 0 and on_seg(p1, p2, p3):
        return True
    if o2 == 0 and on_seg(p1, p2, p4):
        return True
    if o3 == 0 and on_seg(p3, p4, p1):
        return True
    if o4 == 0 and on_seg(p3, p4, p2):
        return True
    return False


def ring_is_simple(ring: Ring) -> bool:
    segs = list(zip(ring, ring[1:]))
    n = len(segs)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # closing segment shares the start vertex
            if _segments_intersect(*segs[i], *segs[j]):
                return False
    return True


def simplify_dp(
    geometry: Sequence[Vertex], epsilon: float, closed: bool = False
) -> Tuple[List[Vertex], bool]:
    """Douglas-Peucker with epsilon in pixels.

    Returns (vertices, fell_back): fell_back is True when simplification
    produced a self-intersecting ring and the unsimplified input was returned.
    Rings pass the closed form (first == last vertex); the two farthest-apart
    vertices are pinned as anchors.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    pts = list(geometry)
    if epsilon == 0:
        return pts, False
    eps2 = epsilon * epsilon
    if not closed:
        return _dp_open(pts, eps2), False

    distinct = pts[:-1]
    n = len(distinct)
    if n <= 4:
        return pts, False
    # Anchor the two farthest-apart vertices.
    bi, bj, best = 0, 1, -1.0
    for i in range(n):
        xi, yi = distinct[i]
        for j in range(i + 1, n):
            d = (distinct[j][0] - xi) ** 2 + (distinct[j][1] - yi) ** 2
            if d > best:
                bi, bj, best = i, j, d
    arc1 = distinct[bi:bj + 1]
    arc2 = distinct[bj:] + distinct[:bi + 1]
    s1 = _dp_open(arc1, eps2)
    s2 = _dp_open(arc2, eps2)
    merged = s1[:-1] + s2[:-1]
    # Rings must keep at least 3 distinct vertices.
    if len(merged) < 3:
        extra, extra_d = None, -1.0
        for arc, simp in ((arc1, s1), (arc2, s2)):
            for p in arc[1:-1]:
                d = _point_segment_dist2(p, arc[0], arc[-1])
                if d > extra_d:
                    extra, extra_d = p, d
        if extra is not None:
            merged = [merged[0], extra, merged[1]] if len(merged) == 2 else merged
    if len(merged) < 3:
        return pts, False
    ring = merged + [merged[0]]
    if not ring_is_simple(ring):
        return pts, True
    return ring, False


# --- Zhang-Suen skeletonization -------------------------------------------

def _zhang_suen(mask: np.ndarray) -> np.ndarray:
    """Thin a boolean mask to a 1-pixel skeleton (two-subiteration scheme)."""
    img = np.pad(mask.astype(np.uint8), 1)
    while True:
        removed_any = False
        for step in (0, 1):
            p2 = img[:-2, 1:-1]
            p3 = img[:-2, 2:]
            p4 = img[1:-1, 2:]
            p5 = img[2:, 2:]
            p6 = img[2:, 1:-1]
            p7 = img[2:, :-2]
            p8 = img[1:-1, :-2]
            p9 = img[:-2, :-2]
            center = img[1:-1, 1:-1]
            seq = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
            b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
            a = np.zeros_like(b)
            for u, v in zip(seq, seq[1:]):
                a += ((u == 0) & (v == 1)).astype(np.uint8)
            if step == 0:
                c1 = p2 * p4 * p6
                c2 = p4 * p6 * p8
            else:
                c1 = p2 * p4 * p8
                c2 = p2 * p6 * p8
            cond = (
                (center == 1) & (b >= 2) & (b <= 6) & (a == 1)
                & (c1 == 0) & (c2 == 0)
            )
            if cond.any():
                center[cond] = 0
                removed_any = True
        if not removed_any:
            break
    return img[1:-1, 1:-1].astype(bool)


_NEIGH8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def skeletonize(labeling: ComponentLabeling, component_id: int) -> SkeletonGraph:
    """Zhang-Suen thinning of one component, then chain extraction.

    Nodes are skeleton pixels of 8-degree != 2; a pure cycle contributes its
    smallest (row, col) pixel as an anchor node.
    """
    info = labeling.table.get(component_id)
    if info is None:
        raise NoSuchComponent(f"component {component_id} does not exist")
    rmin, cmin, rmax, cmax = info.bbox
    sub = labeling.labels[rmin:rmax + 1, cmin:cmax + 1] == component_id
    thin = _zhang_suen(sub)
    pixels = {
        (int(r) + rmin, int(c) + cmin) for r, c in zip(*np.nonzero(thin))
    }
    if not pixels:
        # Parallel thinning deletes small compact blobs (e.g. a lone 2x2
        # square) outright; keep the component's first pixel so every
        # component contributes a skeleton.
        r, c = np.argwhere(sub)[0]
        pixels = {(int(r) + rmin, int(c) + cmin)}

    def degree(p):
        return sum((p[0] + dr, p[1] + dc) in pixels for dr, dc in _NEIGH8)

    nodes = sorted(p for p in pixels if degree(p) != 2)
    node_set = set(nodes)
    edges: List[List[Tuple[int, int]]] = []
    used = set()  # directed half-edges (from, to)

    for node in nodes:
        for dr, dc in _NEIGH8:
            nxt = (node[0] + dr, node[1] + dc)
            if nxt not in pixels or (node, nxt) in used:
                continue
            chain = [node]
            prev, cur = node, nxt
            used.add((prev, cur))
            while cur not in node_set:
                chain.append(cur)
                nbrs = [
                    (cur[0] + a, cur[1] + b)
                    for a, b in _NEIGH8
                    if (cur[0] + a, cur[1] + b) in pixels
                    and (cur[0] + a, cur[1] + b) != prev
                ]
                if not nbrs:
                    break
                prev, cur = cur, nbrs[0]
                used.add((prev, cur))
            if cur in node_set:
                chain.append(cur)
                used.add((cur, prev))  # block re-walking the reverse direction
            edges.append(chain)

    # Dedupe reverse duplicates of node-to-node chains.
    seen = set()
    unique_edges = []
    for chain in edges:
        key = tuple(chain) if tuple(chain) <= tuple(reversed(chain)) else tuple(reversed(chain))
        if key not in seen:
            seen.add(key)
            unique_edges.append(chain)

    # Pure cycles: remaining pixels all have degree 2.
    remaining = pixels - node_set - {p for ch in unique_edges for p in ch}
    while remaining:
        anchor = min(remaining)
        cycle = [anchor]
        prev, cur = anchor, None
        for dr, dc in _NEIGH8:
            cand = (anchor[0] + dr, anchor[1] + dc)
            if cand in remaining:
                cur = cand
                break
        if cur is None:
            nodes.append(anchor)
            remaining.discard(anchor)
            continue
        while cur != anchor:
            cycle.append(cur)
            nbrs = [
                (cur[0] + a, cur[1] + b)
                for a, b in _NEIGH8
                if (cur[0] + a, cur[1] + b) in pixels
                and (cur[0] + a, cur[1] + b) != prev
            ]
            prev, cur = cur, nbrs[0]
        cycle.append(anchor)
        nodes.append(anchor)
        unique_edges.append(cycle)
        remaining -= set(cycle)

    return SkeletonGraph(nodes=sorted(set(nodes)), edges=unique_edges, pixels=pixels)


# --- Rasterization oracle ---------------------------------------------------

def rasterize_oracle(
    polygons: Sequence[FeaturePolygon], width: int, height: int
) -> ClassMap:
    """Even-odd scanline fill at pixel centers; larger class id wins overlaps."""
    out = np.zeros((height, width), dtype=np.int32)
    for poly in sorted(polygons, key=lambda p: p.class_id):
        rings = [poly.exterior] + list(poly.holes)
        ys = [y for ring in rings for _, y in ring]
        r0 = max(0, int(math.floor(min(ys))))
        r1 = min(height - 1, int(math.ceil(max(ys))) - 1)
        for r in range(r0, r1 + 1):
            yc = r + 0.5
            xs: List[float] = []
            for ring in rings:
                for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
                    if (y1 <= yc < y2) or (y2 <= yc < y1):
                        xs.append(x1 + (yc - y1) * (x2 - x1) / (y2 - y1))
            xs.sort()
            for xa, xb in zip(xs[::2], xs[1::2]):
                c_lo = max(0, int(math.floor(xa - 0.5)) + 1)
                c_hi = min(width - 1, int(math.ceil(xb - 0.5)) - 1)
                if c_hi >= c_lo:
                    out[r, c_lo:c_hi + 1] = poly.class_id
    return ClassMap(width, height, out)


# --- Georeferencing of geometry --------------------------------------------

def georeference_geometry(
    geometry: dict,
    affine: AffineTransform,
    crs: Optional[CrsId] = None,
    to_lonlat: bool = False,
) -> dict:
    """Map a GeoJSON-style pixel geometry through the affine transform.

    With to_lonlat=True the CRS must be WGS84 or UTM; UTM coordinates are
    chained through the inverse Transverse Mercator. Polygon winding is
    re-normalized afterwards (exterior positive shoelace in world axes).
    """
    if abs(affine.det) <= 1e-15:
        raise SingularTransform("geotransform is singular")
    if to_lonlat:
        if crs is None or crs.kind == "unknown":
            raise UnknownCrs("lon/lat output requires a known CRS")

    def tx(pt):
        x, y = apply_affine(affine, pt[0], pt[1])
        if to_lonlat and crs.kind == "utm":
            x, y = utm_to_wgs84(x, y, crs.zone, crs.hemisphere)
        return [x, y]

    gtype = geometry["type"]
    if gtype == "Point":
        return {"type": "Point", "coordinates": tx(geometry["coordinates"])}
    if gtype == "LineString":
        return {
            "type": "LineString",
            "coordinates": [tx(p) for p in geometry["coordinates"]],
        }
    if gtype == "Polygon":
        rings = [[tx(p) for p in ring] for ring in geometry["coordinates"]]
        ext = rings[0]
        if shoelace_area2(ext) < 0:
            rings = [list(reversed(r)) for r in rings]
        return {"type": "Polygon", "coordinates": rings}
    raise ValueError(f"unsupported geometry type {gtype!r}")

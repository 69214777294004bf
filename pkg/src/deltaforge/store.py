"""Embedded, versioned store of image primitives with a query surface.

Features keep their full edit history (the curation loop is auditable) and a
coarse grid index accelerates bbox queries. Persistence is JSON-Lines: one
header line, then one line per stored feature version.
"""

from __future__ import annotations

import json
import math
import threading
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .errors import (
    CorruptSnapshot,
    IllegalTransition,
    IncompatibleSnapshot,
    NotFound,
    RejectedGeometry,
)
from .vectorize import ring_is_simple, shoelace_area2

SNAPSHOT_FORMAT_VERSION = 1
_GRID_CELL = 64.0

KINDS = ("point", "line", "polygon", "skeleton")
STAGES = ("auto", "edited", "validated")
# Editing a validated feature is forbidden, including validated -> validated.
_LEGAL_TRANSITIONS = {
    ("auto", "auto"), ("auto", "edited"), ("auto", "validated"),
    ("edited", "edited"), ("edited", "validated"),
}


def geometry_bbox(geometry: dict) -> Tuple[float, float, float, float]:
    gtype = geometry["type"]
    if gtype == "Point":
        x, y = geometry["coordinates"]
        return (x, y, x, y)
    if gtype == "LineString":
        pts = geometry["coordinates"]
    elif gtype == "Polygon":
        pts = [p for ring in geometry["coordinates"] for p in ring]
    else:
        raise RejectedGeometry(f"unsupported geometry type {gtype!r}")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return (min(xs), min(ys), max(xs), max(ys))


def validate_geometry(kind: str, geometry: dict) -> None:
    if kind not in KINDS:
        raise RejectedGeometry(f"unknown feature kind {kind!r}")
    gtype = geometry.get("type")
    coords = geometry.get("coordinates")
    if kind == "point":
        if gtype != "Point" or len(coords) != 2:
            raise RejectedGeometry("point feature needs a Point geometry")
        if not all(math.isfinite(v) for v in coords):
            raise RejectedGeometry("non-finite point coordinates")
        return
    if kind in ("line", "skeleton"):
        if gtype != "LineString" or len(coords) < 2:
            raise RejectedGeometry("line feature needs a LineString of >=2 points")
        return
    # polygon
    if gtype != "Polygon" or not coords:
        raise RejectedGeometry("polygon feature needs a Polygon geometry")
    for i, ring in enumerate(coords):
        if len(ring) < 4:
            raise RejectedGeometry(f"ring {i} has fewer than 4 vertices")
        if list(ring[0]) != list(ring[-1]):
            raise RejectedGeometry(f"ring {i} is not closed")
        tuples = [tuple(p) for p in ring]
        if len(set(tuples[:-1])) != len(tuples) - 1:
            raise RejectedGeometry(f"ring {i} repeats an intermediate vertex")
        if not ring_is_simple(tuples):
            raise RejectedGeometry(f"ring {i} self-intersects")
    ext_area = shoelace_area2([tuple(p) for p in coords[0]])
    if ext_area <= 0:
        raise RejectedGeometry("exterior ring must have positive shoelace area")
    for i, ring in enumerate(coords[1:], 1):
        if shoelace_area2([tuple(p) for p in ring]) >= 0:
            raise RejectedGeometry(f"hole ring {i} must have negative shoelace area")


@dataclass(frozen=True)
class StoredFeature:
    id: str
    kind: str
    class_id: int
    geometry: dict
    bbox: Tuple[float, float, float, float]
    stage: str = "auto"
    version: int = 1
    parent_version: Optional[int] = None
    created_at: str = ""
    lossy_simplified: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "class_id": self.class_id,
            "geometry": self.geometry,
            "bbox": list(self.bbox),
            "stage": self.stage,
            "version": self.version,
            "parent_version": self.parent_version,
            "created_at": self.created_at,
            "lossy_simplified": self.lossy_simplified,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StoredFeature":
        return cls(
            id=d["id"],
            kind=d["kind"],
            class_id=int(d["class_id"]),
            geometry=d["geometry"],
            bbox=tuple(d["bbox"]),
            stage=d["stage"],
            version=int(d["version"]),
            parent_version=d.get("parent_version"),
            created_at=d.get("created_at", ""),
            lossy_simplified=bool(d.get("lossy_simplified", False)),
        )


@dataclass(frozen=True)
class Query:
    class_ids: Optional[Set[int]] = None
    bbox: Optional[Tuple[float, float, float, float]] = None  # intersects
    kinds: Optional[Set[str]] = None
    stages: Optional[Set[str]] = None

    def __post_init__(self):
        if self.bbox is not None:
            x0, y0, x1, y1 = self.bbox
            if x0 > x1 or y0 > y1:
                raise ValueError("query bbox min must be <= max per axis")

    def matches(self, f: StoredFeature) -> bool:
        if self.class_ids is not None and f.class_id not in self.class_ids:
            return False
        if self.kinds is not None and f.kind not in self.kinds:
            return False
        if self.stages is not None and f.stage not in self.stages:
            return False
        if self.bbox is not None:
            x0, y0, x1, y1 = self.bbox
            fx0, fy0, fx1, fy1 = f.bbox
            if fx1 < x0 or fx0 > x1 or fy1 < y0 or fy0 > y1:
                return False
        return True


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


class PrimitiveStore:
    """Single-writer, multi-reader feature store with version history."""

    def __init__(self, crs: Optional[dict] = None,
                 geotransform: Optional[list] = None):
        self.crs = crs
        self.geotransform = geotransform
        self._history: Dict[str, List[StoredFeature]] = {}
        self._grid: Dict[Tuple[int, int], Set[str]] = {}
        self._lock = threading.RLock()

    # -- indexing -------------------------------------------------------

    def _cells(self, bbox) -> Iterable[Tuple[int, int]]:
        x0, y0, x1, y1 = bbox
        cx0, cx1 = int(x0 // _GRID_CELL), int(x1 // _GRID_CELL)
        cy0, cy1 = int(y0 // _GRID_CELL), int(y1 // _GRID_CELL)
        for cy in range(cy0, cy1 + 1):
            for cx in range(cx0, cx1 + 1):
                yield (cx, cy)

    def _index_add(self, f: StoredFeature) -> None:
        for cell in self._cells(f.bbox):
            self._grid.setdefault(cell, set()).add(f.id)

    def _index_remove(self, f: StoredFeature) -> None:
        for cell in self._cells(f.bbox):
            ids = self._grid.get(cell)
            if ids:
                ids.discard(f.id)

    # -- mutation -------------------------------------------------------

    def insert(self, kind: str, class_id: int, geometry: dict,
               stage: str = "auto", lossy_simplified: bool = False,
               feature_id: Optional[str] = None) -> str:
        validate_geometry(kind, geometry)
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        with self._lock:
            fid = feature_id or str(uuid.uuid4())
            if fid in self._history:
                raise ValueError(f"feature id {fid} already present")
            feature = StoredFeature(
                id=fid,
                kind=kind,
                class_id=class_id,
                geometry=geometry,
                bbox=geometry_bbox(geometry),
                stage=stage,
                version=1,
                parent_version=None,
                created_at=_now_iso(),
                lossy_simplified=lossy_simplified,
            )
            self._history[fid] = [feature]
            self._index_add(feature)
            return fid

    def update_geometry(self, feature_id: str, new_geometry: dict,
                        new_stage: Optional[str] = None) -> int:
        with self._lock:
            history = self._history.get(feature_id)
            if history is None:
                raise NotFound(f"no feature {feature_id}")
            latest = history[-1]
            stage = new_stage or latest.stage
            if (latest.stage, stage) not in _LEGAL_TRANSITIONS:
                raise IllegalTransition(
                    f"stage {latest.stage} -> {stage} is not allowed"
                )
            validate_geometry(latest.kind, new_geometry)
            new = replace(
                latest,
                geometry=new_geometry,
                bbox=geometry_bbox(new_geometry),
                stage=stage,
                version=latest.version + 1,
                parent_version=latest.version,
                created_at=_now_iso(),
            )
            self._index_remove(latest)
            history.append(new)
            self._index_add(new)
            return new.version

    def set_stage(self, feature_id: str, new_stage: str) -> int:
        with self._lock:
            history = self._history.get(feature_id)
            if history is None:
                raise NotFound(f"no feature {feature_id}")
            latest = history[-1]
            if new_stage == latest.stage:
                return latest.version
            if (latest.stage, new_stage) not in _LEGAL_TRANSITIONS:
                raise IllegalTransition(
                    f"stage {latest.stage} -> {new_stage} is not allowed"
                )
            new = replace(
                latest,
                stage=new_stage,
                version=latest.version + 1,
                parent_version=latest.version,
                created_at=_now_iso(),
            )
            history.append(new)
            return new.version

    # -- reads ----------------------------------------------------------

    def get(self, feature_id: str) -> StoredFeature:
        history = self._history.get(feature_id)
        if history is None:
            raise NotFound(f"no feature {feature_id}")
        return history[-1]

    def history(self, feature_id: str) -> List[StoredFeature]:
        history = self._history.get(feature_id)
        if history is None:
            raise NotFound(f"no feature {feature_id}")
        return list(history)

    def __len__(self) -> int:
        return len(self._history)

    def ids(self) -> List[str]:
        return sorted(self._history)

    def query(self, q: Query) -> List[StoredFeature]:
        with self._lock:
            if q.bbox is not None:
                x0, y0, x1, y1 = q.bbox
                cx0, cx1 = int(x0 // _GRID_CELL), int(x1 // _GRID_CELL)
                cy0, cy1 = int(y0 // _GRID_CELL), int(y1 // _GRID_CELL)
                candidates: Set[str] = set()
                if (cx1 - cx0 + 1) * (cy1 - cy0 + 1) > len(self._grid):
                    # Huge bbox: scanning occupied cells beats enumerating
                    # every cell the bbox covers.
                    for (cx, cy), ids in self._grid.items():
                        if cx0 <= cx <= cx1 and cy0 <= cy <= cy1:
                            candidates |= ids
                else:
                    for cell in self._cells(q.bbox):
                        candidates |= self._grid.get(cell, set())
            else:
                candidates = set(self._history)
            out = [
                self._history[fid][-1]
                for fid in sorted(candidates)
                if q.matches(self._history[fid][-1])
            ]
            return out

    # -- persistence ------------------------------------------------------

    def snapshot_save(self, path) -> None:
        path = Path(path)
        with self._lock:
            lines = [json.dumps({
                "format_version": SNAPSHOT_FORMAT_VERSION,
                "crs": self.crs,
                "geotransform": self.geotransform,
            }, sort_keys=True)]
            for fid in sorted(self._history):
                for version in self._history[fid]:
                    lines.append(json.dumps(version.to_dict(), sort_keys=True))
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def snapshot_load(cls, path) -> "PrimitiveStore":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines:
            raise CorruptSnapshot("empty snapshot", line_no=1)
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise CorruptSnapshot(f"bad header: {exc}", line_no=1) from exc
        fmt = header.get("format_version")
        if fmt != SNAPSHOT_FORMAT_VERSION:
            raise IncompatibleSnapshot(
                f"snapshot format {fmt}, expected {SNAPSHOT_FORMAT_VERSION}"
            )
        store = cls(crs=header.get("crs"), geotransform=header.get("geotransform"))
        for line_no, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                feature = StoredFeature.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptSnapshot(
                    f"malformed feature line: {exc}", line_no=line_no
                ) from exc
            history = store._history.setdefault(feature.id, [])
            if history and feature.version != history[-1].version + 1:
                raise CorruptSnapshot(
                    f"non-monotonic version for {feature.id}", line_no=line_no
                )
            history.append(feature)
        for history in store._history.values():
            store._index_add(history[-1])
        return store

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PrimitiveStore)
            and self.crs == other.crs
            and self.geotransform == other.geotransform
            and self._history == other._history
        )

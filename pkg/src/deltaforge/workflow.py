"""Session orchestration: load raster -> label -> train -> classify ->
vectorize -> edit -> validate -> export.

A Session is a directory on disk; every mutating operation can be replayed
from its saved state, so the CLI and the HTTP service share one code path.
"""

from __future__ import annotations

import json
import uuid
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import classify as cls
from . import osm as osm_mod
from .classify import ClassMap, ClassDef, LabelSet
from .errors import (
    BadLabel,
    BadPalette,
    DegenerateTraining,
    EmptyExport,
    NoClassMap,
    NoModel,
    NotGeoreferenced,
)
from .georef import AffineTransform
from .raster import RasterImage, read_gridpack, render_preview, encode_png
from .store import PrimitiveStore, Query, StoredFeature
from .vectorize import (
    FeaturePolygon,
    georeference_geometry,
    label_components,
    polygonize,
    simplify_dp,
    skeletonize,
)

_FEATURE_NS = uuid.UUID("6f2f9f42-7c93-4a37-9a17-1b5ab6f3f0a5")


@dataclass
class PipelineConfig:
    svm_c: float = 10.0
    svm_kernel: str = "rbf"
    svm_gamma: Optional[float] = None
    svm_tol: float = 1e-3
    svm_max_passes: int = 20
    knn_k: int = 5
    dp_epsilon: float = 0.75
    min_pixels: int = 4
    holdout_fraction: float = 0.2
    seed: int = 42
    tagmap_path: Optional[str] = None
    export_points: bool = False

    def __post_init__(self):
        if not (0.0 < self.holdout_fraction < 1.0):
            raise ValueError("holdout fraction must be in (0, 1)")
        if self.dp_epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @classmethod
    def from_file(cls_, path) -> "PipelineConfig":
        return cls_(**json.loads(Path(path).read_text()))


def load_raster(path) -> RasterImage:
    path = Path(path)
    if path.suffix.lower() in (".tif", ".tiff"):
        from .geotiff import read_geotiff
        return read_geotiff(path)
    return read_gridpack(path)


@dataclass
class Session:
    id: str
    raster_path: str
    raster: RasterImage
    raster_digest: str
    palette: List[ClassDef]
    config: PipelineConfig
    labels: LabelSet
    store: PrimitiveStore
    model: Optional[cls.Model] = None
    class_map: Optional[ClassMap] = None
    iterations: List[dict] = field(default_factory=list)
    vectorize_runs: int = 0

    def class_by_id(self, cid: int) -> ClassDef:
        for c in self.palette:
            if c.id == cid:
                return c
        raise BadPalette(f"class id {cid} not in palette")

    def palette_colors(self) -> Dict[int, Tuple[int, int, int]]:
        return {c.id: c.color for c in self.palette}


def session_create(
    raster_path,
    palette: Sequence[dict] | str | Path,
    config: Optional[PipelineConfig] = None,
    session_id: Optional[str] = None,
) -> Session:
    raster = load_raster(raster_path)
    if isinstance(palette, (str, Path)):
        try:
            class_defs = cls.load_palette(palette)
        except ValueError as exc:
            raise BadPalette(str(exc)) from exc
    else:
        try:
            class_defs = cls.palette_from_dicts(palette)
        except ValueError as exc:
            raise BadPalette(str(exc)) from exc
    digest = raster.digest()
    return Session(
        id=session_id or str(uuid.uuid4()),
        raster_path=str(raster_path),
        raster=raster,
        raster_digest=digest,
        palette=class_defs,
        config=config or PipelineConfig(),
        labels=LabelSet(digest),
        store=PrimitiveStore(
            crs=raster.crs.to_dict(), geotransform=raster.geo.to_list()
        ),
    )


def session_save(session: Session, dir_path) -> None:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    meta = {
        "id": session.id,
        "raster_path": session.raster_path,
        "raster_digest": session.raster_digest,
        "palette": [
            {"id": c.id, "name": c.name, "color": list(c.color),
             "parent_id": c.parent_id}
            for c in session.palette
        ],
        "config": asdict(session.config),
        "iterations": session.iterations,
        "vectorize_runs": session.vectorize_runs,
        "has_model": session.model is not None,
        "has_class_map": session.class_map is not None,
    }
    (dir_path / "session.json").write_text(json.dumps(meta, indent=2))
    (dir_path / "labels.json").write_text(json.dumps(session.labels.to_dict()))
    if session.model is not None:
        (dir_path / "model.json").write_text(json.dumps(session.model.to_dict()))
    if session.class_map is not None:
        np.save(dir_path / "classmap.npy", session.class_map.classes)
        (dir_path / "classmap.json").write_text(json.dumps({
            "class_table": list(session.class_map.table()),
        }))
    session.store.snapshot_save(dir_path / "store.jsonl")


def session_load(dir_path) -> Session:
    dir_path = Path(dir_path)
    meta = json.loads((dir_path / "session.json").read_text())
    config = PipelineConfig(**meta["config"])
    raster = load_raster(meta["raster_path"])
    digest = raster.digest()
    if digest != meta["raster_digest"]:
        raise BadLabel("raster content changed since the session was saved")
    labels = LabelSet.from_dict(json.loads((dir_path / "labels.json").read_text()))
    model = None
    model_path = dir_path / "model.json"
    if meta.get("has_model") and model_path.exists():
        d = json.loads(model_path.read_text())
        model = (cls.KnnModel.from_dict(d) if d["kind"] == "knn"
                 else cls.SvmModel.from_dict(d))
    class_map = None
    if meta.get("has_class_map") and (dir_path / "classmap.npy").exists():
        grid = np.load(dir_path / "classmap.npy")
        table = tuple(json.loads((dir_path / "classmap.json").read_text())["class_table"])
        class_map = ClassMap(grid.shape[1], grid.shape[0], grid, class_table=table)
    store_path = dir_path / "store.jsonl"
    store = (PrimitiveStore.snapshot_load(store_path) if store_path.exists()
             else PrimitiveStore(crs=raster.crs.to_dict(),
                                 geotransform=raster.geo.to_list()))
    return Session(
        id=meta["id"],
        raster_path=meta["raster_path"],
        raster=raster,
        raster_digest=meta["raster_digest"],
        palette=cls.palette_from_dicts(meta["palette"]),
        config=config,
        labels=labels,
        store=store,
        model=model,
        class_map=class_map,
        iterations=list(meta.get("iterations", [])),
        vectorize_runs=int(meta.get("vectorize_runs", 0)),
    )


def add_labels(session: Session,
               samples: Sequence[Tuple[int, int, int]]) -> Dict[int, int]:
    """Merge new (row, col, class_id) samples; returns per-class totals."""
    valid = session.raster.valid_mask()
    known = {c.id for c in session.palette}
    additions = LabelSet(session.raster_digest)
    for row, col, cid in samples:
        if not (0 <= row < session.raster.height and 0 <= col < session.raster.width):
            raise BadLabel(f"pixel ({row},{col}) out of bounds", row=row, col=col)
        if not valid[row, col]:
            raise BadLabel(f"pixel ({row},{col}) is nodata", row=row, col=col)
        if cid not in known:
            raise BadLabel(f"class {cid} not in palette", row=row, col=col)
        additions.add(int(row), int(col), int(cid))
    session.labels = cls.merge_labels(session.labels, additions)
    return session.labels.counts()


def _holdout_split(labels: LabelSet, fraction: float, seed: int
                   ) -> Tuple[LabelSet, LabelSet]:
    """Deterministic stratified split into (train, holdout)."""
    rng = np.random.default_rng(seed)
    by_class: Dict[int, List[Tuple[int, int, int]]] = {}
    for s in labels.samples:
        by_class.setdefault(s[2], []).append(s)
    train = LabelSet(labels.raster_digest)
    hold = LabelSet(labels.raster_digest)
    for cid in sorted(by_class):
        group = by_class[cid]
        perm = rng.permutation(len(group))
        n_hold = int(len(group) * fraction)
        n_hold = min(n_hold, len(group) - 1)  # keep >=1 training sample
        hold_idx = set(perm[:n_hold].tolist())
        for i, s in enumerate(group):
            (hold if i in hold_idx else train).add(*s)
    return train, hold


def run_train(session: Session, model_kind: str = "svm") -> dict:
    """Train on a stratified split of the labels; log holdout accuracy."""
    counts = session.labels.counts()
    if len(counts) < 2:
        raise DegenerateTraining(
            f"need labels for >=2 classes, have {len(counts)}"
        )
    for c in session.palette:
        if c.id not in counts:
            warnings.warn(f"class {c.id} ({c.name}) has no samples; skipped")
    train_labels, hold_labels = _holdout_split(
        session.labels, session.config.holdout_fraction, session.config.seed
    )
    features, targets, normalizer = cls.build_training_set(
        session.raster, train_labels
    )
    if model_kind == "svm":
        params = cls.SvmParams(
            C=session.config.svm_c,
            kernel=session.config.svm_kernel,
            gamma=session.config.svm_gamma,
            tol=session.config.svm_tol,
            max_passes=session.config.svm_max_passes,
            seed=session.config.seed,
        )
        model = cls.train_svm(features, targets, params, normalizer)
    elif model_kind == "knn":
        k = min(session.config.knn_k, len(features))
        model = cls.train_knn(features, targets, k, normalizer)
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    session.model = model

    hold_samples = hold_labels.samples
    if hold_samples:
        rows = np.array([s[0] for s in hold_samples])
        cols = np.array([s[1] for s in hold_samples])
        truth = np.array([s[2] for s in hold_samples])
        raw = session.raster.samples[:, rows, cols].T
        preds = cls._predict_block(model, normalizer.apply(raw))
        accuracy = float(np.mean(preds == truth))
    else:
        accuracy = float("nan")

    entry = {
        "iteration": len(session.iterations) + 1,
        "model": model_kind,
        "sample_counts": {str(k): v for k, v in sorted(counts.items())},
        "holdout_accuracy": accuracy,
    }
    session.iterations.append(entry)
    return entry


def run_classify(session: Session, workers: int = 1) -> ClassMap:
    if session.model is None:
        raise NoModel("train a model before classifying")
    session.class_map = cls.predict_map(session.model, session.raster,
                                        workers=workers)
    return session.class_map


def overlay_png(session: Session, alpha: float = 0.6) -> bytes:
    """Palette-colored classification overlay; unclassified transparent."""
    if session.class_map is None:
        raise NoClassMap("no classification to render")
    grid = session.class_map.classes
    rgba = np.zeros((grid.shape[0], grid.shape[1], 4), dtype=np.uint8)
    a = int(round(alpha * 255))
    for cid, color in session.palette_colors().items():
        mask = grid == cid
        rgba[mask, 0] = color[0]
        rgba[mask, 1] = color[1]
        rgba[mask, 2] = color[2]
        rgba[mask, 3] = a
    return encode_png(rgba)


def preview_png(session: Session, bands: Sequence[int] = None,
                stretch: Tuple[float, float] = (2.0, 98.0)) -> bytes:
    if bands is None:
        n = session.raster.bands
        bands = (0, min(1, n - 1), min(2, n - 1))
    return encode_png(render_preview(session.raster, bands, stretch))


def _feature_uuid(session: Session, run: int, name: str) -> str:
    return str(uuid.uuid5(_FEATURE_NS, f"{session.id}:{run}:{name}"))


def run_vectorize(
    session: Session,
    epsilon: Optional[float] = None,
    skeleton: bool = False,
    min_pixels: Optional[int] = None,
) -> dict:
    """Polygonize the class map into the store; returns counts."""
    if session.class_map is None:
        raise NoClassMap("classify before vectorizing")
    epsilon = session.config.dp_epsilon if epsilon is None else epsilon
    min_pixels = session.config.min_pixels if min_pixels is None else min_pixels
    session.vectorize_runs += 1
    run = session.vectorize_runs

    labeling = label_components(session.class_map)
    inserted = 0
    skipped = 0
    for cid in sorted(labeling.table):
        info = labeling.table[cid]
        if info.pixel_count < min_pixels:
            skipped += 1
            continue
        polygons = polygonize_component(labeling, cid)
        geometry, lossy = _polygon_geometry(polygons, epsilon)
        session.store.insert(
            kind="polygon",
            class_id=info.class_id,
            geometry=geometry,
            lossy_simplified=lossy,
            feature_id=_feature_uuid(session, run, f"poly:{cid}"),
        )
        inserted += 1
        if skeleton:
            graph = skeletonize(labeling, cid)
            for i, chain in enumerate(graph.edges):
                if len(chain) < 2:
                    continue
                coords = [[c + 0.5, r + 0.5] for r, c in chain]
                session.store.insert(
                    kind="skeleton",
                    class_id=info.class_id,
                    geometry={"type": "LineString", "coordinates": coords},
                    feature_id=_feature_uuid(session, run, f"skel:{cid}:{i}"),
                )
                inserted += 1
    return {"inserted": inserted, "skipped_small": skipped, "run": run}


def polygonize_component(labeling, cid) -> FeaturePolygon:
    from .vectorize import trace_boundaries
    exterior, holes = trace_boundaries(labeling, cid)
    return FeaturePolygon(
        component_id=cid,
        class_id=labeling.table[cid].class_id,
        exterior=exterior,
        holes=holes,
    )


def _polygon_geometry(poly: FeaturePolygon, epsilon: float) -> Tuple[dict, bool]:
    lossy = False
    rings = []
    for ring in [poly.exterior] + poly.holes:
        simplified, fell_back = simplify_dp(ring, epsilon, closed=True)
        lossy = lossy or (epsilon > 0 and not fell_back
                          and len(simplified) < len(ring))
        rings.append([[float(x), float(y)] for x, y in simplified])
    return {"type": "Polygon", "coordinates": rings}, lossy


def validate_feature(session: Session, feature_id: str) -> int:
    return session.store.set_stage(feature_id, "validated")


def _world_features(session: Session, include_unvalidated: bool,
                    to_lonlat: bool) -> List[osm_mod.WorldFeature]:
    stages = None if include_unvalidated else {"validated"}
    features = session.store.query(Query(stages=stages))
    crs = session.raster.crs
    if to_lonlat and crs.kind == "unknown":
        raise NotGeoreferenced("raster CRS is unknown; cannot produce lon/lat")
    names = {c.id: c.name for c in session.palette}
    out = []
    for f in features:
        geom = georeference_geometry(
            f.geometry, session.raster.geo, crs=crs, to_lonlat=to_lonlat
        )
        out.append(osm_mod.WorldFeature(
            id=f.id,
            kind=f.kind,
            class_id=f.class_id,
            class_name=names.get(f.class_id, f"class_{f.class_id}"),
            stage=f.stage,
            version=f.version,
            geometry=geom,
        ))
    return out


def export(session: Session, fmt: str, path,
           include_unvalidated: bool = False) -> Path:
    path = Path(path)
    if fmt == "snapshot":
        session.store.snapshot_save(path)
        return path
    if fmt not in ("osm", "geojson"):
        raise ValueError(f"unknown export format {fmt!r}")
    features = _world_features(session, include_unvalidated, to_lonlat=True)
    if not features:
        warnings.warn("nothing to export; writing a valid empty document",
                      EmptyExport)
    if fmt == "osm":
        tagmap = (osm_mod.load_tagmap(session.config.tagmap_path)
                  if session.config.tagmap_path else None)
        doc = osm_mod.build_osm_doc(
            features, tagmap, include_points=session.config.export_points
        )
        osm_mod.write_osm_xml(doc, path)
    else:
        osm_mod.write_geojson(features, path)
    return path

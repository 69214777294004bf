"""Training-sample management and per-pixel classifiers (k-NN, SMO SVM).

Classifiers operate on z-scored band vectors; the normalizer is fitted on the
training samples and travels with the model so prediction on raw rasters is
scale-free. All tie-breaks resolve to the smallest class id.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    BadK,
    DegenerateTraining,
    EmptyEvaluation,
    ShapeMismatch,
    StaleLabels,
    UnknownClass,
)
from .raster import RasterImage


@dataclass(frozen=True)
class ClassDef:
    id: int
    name: str
    color: Tuple[int, int, int]
    parent_id: Optional[int] = None

    def __post_init__(self):
        if self.id < 1:
            raise ValueError("class ids start at 1; 0 is reserved for unclassified")


def load_palette(path) -> List[ClassDef]:
    entries = json.loads(Path(path).read_text())
    return palette_from_dicts(entries)


def palette_from_dicts(entries) -> List[ClassDef]:
    defs = [
        ClassDef(
            id=int(e["id"]),
            name=str(e["name"]),
            color=tuple(int(c) for c in e["color"]),
            parent_id=e.get("parent_id"),
        )
        for e in entries
    ]
    ids = {d.id for d in defs}
    if len(ids) != len(defs):
        raise ValueError("duplicate class ids in palette")
    for d in defs:
        if d.parent_id is not None:
            if d.parent_id not in ids:
                raise ValueError(f"class {d.id}: parent {d.parent_id} undefined")
            parent = next(p for p in defs if p.id == d.parent_id)
            if parent.parent_id is not None:
                raise ValueError("class hierarchy deeper than 2 levels")
    return defs


class LabelSet:
    """Pixel labels keyed by (row, col); later writes win."""

    def __init__(self, raster_digest: str,
                 samples: Optional[Sequence[Tuple[int, int, int]]] = None):
        self.raster_digest = raster_digest
        self._by_pixel: Dict[Tuple[int, int], int] = {}
        for row, col, cid in samples or []:
            self._by_pixel[(int(row), int(col))] = int(cid)

    def add(self, row: int, col: int, class_id: int) -> None:
        self._by_pixel[(row, col)] = class_id

    @property
    def samples(self) -> List[Tuple[int, int, int]]:
        return [(r, c, cid) for (r, c), cid in sorted(self._by_pixel.items())]

    def __len__(self) -> int:
        return len(self._by_pixel)

    def counts(self) -> Dict[int, int]:
        out: Dict[int, int] = {}
        for cid in self._by_pixel.values():
            out[cid] = out.get(cid, 0) + 1
        return out

    def to_dict(self) -> dict:
        return {
            "raster_digest": self.raster_digest,
            "samples": [
                {"row": r, "col": c, "class": cid} for r, c, cid in self.samples
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSet":
        return cls(
            d["raster_digest"],
            [(s["row"], s["col"], s["class"]) for s in d["samples"]],
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LabelSet)
            and self.raster_digest == other.raster_digest
            and self._by_pixel == other._by_pixel
        )


def merge_labels(base: LabelSet, additions: LabelSet) -> LabelSet:
    if base.raster_digest != additions.raster_digest:
        raise StaleLabels("label sets reference different rasters")
    merged = LabelSet(base.raster_digest, base.samples)
    for row, col, cid in additions.samples:
        merged.add(row, col, cid)
    return merged


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray  # zero-variance bands stored as 1

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


def build_training_set(
    raster: RasterImage, labels: LabelSet
) -> Tuple[np.ndarray, np.ndarray, Normalizer]:
    """Z-scored feature matrix + targets in deterministic row-major order."""
    if labels.raster_digest != raster.digest():
        raise StaleLabels("labels were recorded against a different raster")
    samples = labels.samples  # already sorted row-major
    if not samples:
        raise DegenerateTraining("no training samples")
    rows = np.array([s[0] for s in samples])
    cols = np.array([s[1] for s in samples])
    targets = np.array([s[2] for s in samples], dtype=int)
    raw = raster.samples[:, rows, cols].T.astype(np.float64)  # N x B
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)  # population std
    std = np.where(std > 0, std, 1.0)
    normalizer = Normalizer(mean, std)
    return normalizer.apply(raw), targets, normalizer


@dataclass(frozen=True)
class KnnModel:
    k: int
    features: np.ndarray  # N x B, normalized
    targets: np.ndarray
    normalizer: Normalizer

    @property
    def band_count(self) -> int:
        return self.features.shape[1]

    def to_dict(self):
        return {
            "kind": "knn",
            "k": self.k,
            "features": self.features.tolist(),
            "targets": self.targets.tolist(),
            "normalizer": self.normalizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            k=int(d["k"]),
            features=np.asarray(d["features"], float),
            targets=np.asarray(d["targets"], int),
            normalizer=Normalizer.from_dict(d["normalizer"]),
        )


def train_knn(features: np.ndarray, targets: np.ndarray, k: int,
              normalizer: Normalizer) -> KnnModel:
    if k < 1 or k > len(features):
        raise BadK(f"k={k} with {len(features)} samples")
    return KnnModel(k=k, features=np.array(features), targets=np.array(targets),
                    normalizer=normalizer)


@dataclass(frozen=True)
class OneVsRestMachine:
    class_id: int
    support_vectors: np.ndarray  # S x B
    dual_coef: np.ndarray        # alpha_i * y_i per support vector
    bias: float

    def decision(self, kernel, x: np.ndarray) -> np.ndarray:
        return kernel(x, self.support_vectors) @ self.dual_coef + self.bias


@dataclass(frozen=True)
class SvmParams:
    C: float = 10.0
    kernel: str = "rbf"  # "linear" | "rbf"
    gamma: Optional[float] = None  # default 1/(B * mean band variance)
    tol: float = 1e-3
    max_passes: int = 20
    seed: int = 42


@dataclass(frozen=True)
class SvmModel:
    machines: Tuple[OneVsRestMachine, ...]
    kernel: str
    gamma: float
    C: float
    normalizer: Normalizer
    seed: int

    @property
    def band_count(self) -> int:
        return self.machines[0].support_vectors.shape[1]

    def _kernel(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        if self.kernel == "linear":
            return A @ B.T
        d = (
            np.sum(A * A, axis=1)[:, None]
            + np.sum(B * B, axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        return np.exp(-self.gamma * np.maximum(d, 0.0))

    def decision_values(self, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (class_ids, N x K decision matrix)."""
        class_ids = np.array([m.class_id for m in self.machines])
        scores = np.column_stack(
            [m.decision(self._kernel, features) for m in self.machines]
        )
        return class_ids, scores

    def to_dict(self):
        return {
            "kind": "svm",
            "kernel": self.kernel,
            "gamma": self.gamma,
            "C": self.C,
            "seed": self.seed,
            "normalizer": self.normalizer.to_dict(),
            "machines": [
                {
                    "class_id": m.class_id,
                    "support_vectors": m.support_vectors.tolist(),
                    "dual_coef": m.dual_coef.tolist(),
                    "bias": m.bias,
                }
                for m in self.machines
            ],
        }

    @classmethod
    def from_dict(cls, d):
        machines = tuple(
            OneVsRestMachine(
                class_id=int(m["class_id"]),
                support_vectors=np.asarray(m["support_vectors"], float),
                dual_coef=np.asarray(m["dual_coef"], float),
                bias=float(m["bias"]),
            )
            for m in d["machines"]
        )
        return cls(
            machines=machines,
            kernel=d["kernel"],
            gamma=float(d["gamma"]),
            C=float(d["C"]),
            normalizer=Normalizer.from_dict(d["normalizer"]),
            seed=int(d["seed"]),
        )


Model = Union[KnnModel, SvmModel]


def _smo_binary(K: np.ndarray, y: np.ndarray, C: float, tol: float,
                max_passes: int, rng: np.random.Generator
                ) -> Tuple[np.ndarray, float]:
    """Simplified SMO: random-partner pairwise alpha updates until no change
    survives max_passes sweeps. Returns (alphas, bias)."""
    n = len(y)
    alphas = np.zeros(n)
    b = 0.0
    passes = 0
    while passes < max_passes:
        changed = 0
        for i in range(n):
            Ei = (alphas * y) @ K[:, i] + b - y[i]
            if (y[i] * Ei < -tol and alphas[i] < C) or (y[i] * Ei > tol and alphas[i] > 0):
                j = int(rng.integers(0, n - 1))
                if j >= i:
                    j += 1
                Ej = (alphas * y) @ K[:, j] + b - y[j]
                ai_old, aj_old = alphas[i], alphas[j]
                if y[i] != y[j]:
                    L = max(0.0, aj_old - ai_old)
                    H = min(C, C + aj_old - ai_old)
                else:
                    L = max(0.0, ai_old + aj_old - C)
                    H = min(C, ai_old + aj_old)
                if L == H:
                    continue
                eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
                if eta >= 0:
                    continue
                aj = aj_old - y[j] * (Ei - Ej) / eta
                aj = min(H, max(L, aj))
                if abs(aj - aj_old) < 1e-5:
                    continue
                ai = ai_old + y[i] * y[j] * (aj_old - aj)
                alphas[i], alphas[j] = ai, aj
                b1 = (b - Ei - y[i] * (ai - ai_old) * K[i, i]
                      - y[j] * (aj - aj_old) * K[i, j])
                b2 = (b - Ej - y[i] * (ai - ai_old) * K[i, j]
                      - y[j] * (aj - aj_old) * K[j, j])
                if 0 < ai < C:
                    b = b1
                elif 0 < aj < C:
                    b = b2
                else:
                    b = (b1 + b2) / 2.0
                changed += 1
        passes = passes + 1 if changed == 0 else 0
    return alphas, b


def default_gamma(features: np.ndarray) -> float:
    var = float(features.var(axis=0).mean())
    bands = features.shape[1]
    if var <= 0:
        return 1.0
    return 1.0 / (bands * var)


def train_svm(features: np.ndarray, targets: np.ndarray, params: SvmParams,
              normalizer: Normalizer) -> SvmModel:
    classes = sorted(set(int(t) for t in targets))
    if len(features) < 2 or len(classes) < 2:
        raise DegenerateTraining(
            f"need >=2 samples of >=2 classes, got {len(features)} samples of "
            f"{len(classes)} class(es)"
        )
    gamma = params.gamma if params.gamma is not None else default_gamma(features)
    X = np.asarray(features, float)
    if params.kernel == "linear":
        K = X @ X.T
    elif params.kernel == "rbf":
        d = (
            np.sum(X * X, axis=1)[:, None]
            + np.sum(X * X, axis=1)[None, :]
            - 2.0 * (X @ X.T)
        )
        K = np.exp(-gamma * np.maximum(d, 0.0))
    else:
        raise ValueError(f"unknown kernel {params.kernel!r}")

    machines = []
    for cid in classes:
        y = np.where(targets == cid, 1.0, -1.0)
        rng = np.random.default_rng(params.seed + cid)
        alphas, b = _smo_binary(K, y, params.C, params.tol, params.max_passes, rng)
        sv = alphas > 1e-12
        machines.append(OneVsRestMachine(
            class_id=cid,
            support_vectors=X[sv].copy(),
            dual_coef=(alphas[sv] * y[sv]),
            bias=b,
        ))
    return SvmModel(
        machines=tuple(machines),
        kernel=params.kernel,
        gamma=gamma,
        C=params.C,
        normalizer=normalizer,
        seed=params.seed,
    )


@dataclass
class ClassMap:
    width: int
    height: int
    classes: np.ndarray  # H x W int array, 0 = unclassified/nodata
    class_table: Optional[Tuple[int, ...]] = None  # ids the producer could emit

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int32)
        if self.classes.shape != (self.height, self.width):
            raise ValueError("class grid shape mismatch")

    def table(self) -> Tuple[int, ...]:
        if self.class_table is not None:
            return self.class_table
        return tuple(int(c) for c in np.unique(self.classes) if c != 0)

    def __eq__(self, other):
        return (
            isinstance(other, ClassMap)
            and self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.classes, other.classes))
        )


def _predict_block(model: Model, feats: np.ndarray) -> np.ndarray:
    """Predict class ids for an N x B block of normalized features."""
    if isinstance(model, KnnModel):
        d = (
            np.sum(feats * feats, axis=1)[:, None]
            + np.sum(model.features * model.features, axis=1)[None, :]
            - 2.0 * (feats @ model.features.T)
        )
        # Stable ordering: ties in distance resolved by training index.
        order = np.argsort(d, axis=1, kind="stable")[:, : model.k]
        votes = model.targets[order]
        out = np.empty(len(feats), dtype=np.int32)
        for i in range(len(feats)):
            ids, counts = np.unique(votes[i], return_counts=True)
            out[i] = ids[np.argmax(counts == counts.max())]  # smallest id wins ties
        return out
    class_ids, scores = model.decision_values(feats)
    # argmax, ties to smallest class id: class_ids ascending so argmax suffices.
    return class_ids[np.argmax(scores, axis=1)].astype(np.int32)


def predict_map(model: Model, raster: RasterImage, workers: int = 1) -> ClassMap:
    if model.band_count != raster.bands:
        raise ShapeMismatch(
            f"model expects {model.band_count} bands, raster has {raster.bands}"
        )
    valid = raster.valid_mask()
    flat_valid = valid.ravel()
    feats = raster.samples.reshape(raster.bands, -1).T[flat_valid]
    feats = model.normalizer.apply(feats)
    out = np.zeros(raster.height * raster.width, dtype=np.int32)
    if len(feats):
        n = len(feats)
        chunk = max(1, (n + max(1, workers) - 1) // max(1, workers))
        blocks = [(s, feats[s:s + chunk]) for s in range(0, n, chunk)]
        preds = np.empty(n, dtype=np.int32)
        if workers > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda b: _predict_block(model, b[1]), blocks))
            for (s, blk), res in zip(blocks, results):
                preds[s:s + len(blk)] = res
        else:
            for s, blk in blocks:
                preds[s:s + len(blk)] = _predict_block(model, blk)
        out[flat_valid] = preds
    if isinstance(model, KnnModel):
        table = tuple(sorted(set(int(t) for t in model.targets)))
    else:
        table = tuple(sorted(m.class_id for m in model.machines))
    return ClassMap(raster.width, raster.height,
                    out.reshape(raster.height, raster.width), class_table=table)


@dataclass(frozen=True)
class Evaluation:
    class_ids: Tuple[int, ...]
    confusion: np.ndarray  # rows = truth, cols = predicted
    accuracy: float
    per_class_recall: Dict[int, float]


def evaluate(class_map: ClassMap, truth: LabelSet) -> Evaluation:
    samples = truth.samples
    if not samples:
        raise EmptyEvaluation("truth label set is empty")
    map_classes = set(class_map.table())
    truth_classes = set(cid for _, _, cid in samples)
    missing = truth_classes - map_classes
    if missing:
        raise UnknownClass(f"truth classes {sorted(missing)} absent from map table")
    ids = sorted(truth_classes | map_classes)
    index = {cid: i for i, cid in enumerate(ids)}
    conf = np.zeros((len(ids), len(ids)), dtype=int)
    for row, col, cid in samples:
        if not (0 <= row < class_map.height and 0 <= col < class_map.width):
            raise ValueError(f"truth pixel ({row},{col}) out of bounds")
        pred = int(class_map.classes[row, col])
        if pred == 0:
            continue  # unclassified pixels excluded from the matrix
        conf[index[cid], index[pred]] += 1
    total = conf.sum()
    if total == 0:
        raise EmptyEvaluation("no classified pixels under the truth set")
    accuracy = float(np.trace(conf)) / float(total)
    recall = {}
    for cid in ids:
        row_sum = conf[index[cid]].sum()
        if row_sum:
            recall[cid] = float(conf[index[cid], index[cid]]) / float(row_sum)
    return Evaluation(tuple(ids), conf, accuracy, recall)

"""Multiband raster container, gridpack I/O, band statistics and previews.

A RasterImage keeps every band as float64 regardless of the on-disk type, so
downstream math never branches on dtype. The "gridpack" format (header.json +
one little-endian float64 .bin per band) is the canonical portable fixture
format; GeoTIFF ingest lives in geotiff.py.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import (
    BadBandSelection,
    CorruptGridpack,
    EmptyBand,
    UnsupportedGridpack,
)
from .georef import AffineTransform, CrsId

GRIDPACK_DTYPE = "f64"


@dataclass(frozen=True)
class RasterImage:
    width: int
    height: int
    bands: int
    samples: np.ndarray  # shape (bands, height, width), float64
    geo: AffineTransform
    crs: CrsId
    nodata: Optional[float] = None
    band_names: Optional[List[str]] = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.bands <= 0:
            raise ValueError("raster dimensions must be positive")
        if self.samples.shape != (self.bands, self.height, self.width):
            raise ValueError(
                f"samples shape {self.samples.shape} does not match "
                f"({self.bands},{self.height},{self.width})"
            )
        if abs(self.geo.det) <= 1e-15:
            raise ValueError("geotransform is singular")
        self.samples.setflags(write=False)

    def valid_mask(self) -> np.ndarray:
        """True where no band holds the nodata sentinel, shape (H, W)."""
        if self.nodata is None:
            return np.ones((self.height, self.width), dtype=bool)
        return ~np.any(self.samples == self.nodata, axis=0)

    def digest(self) -> str:
        """Content hash binding label sets to this exact raster."""
        h = hashlib.sha256()
        h.update(f"{self.width},{self.height},{self.bands}".encode())
        h.update(np.ascontiguousarray(self.samples).tobytes())
        if self.nodata is not None:
            h.update(repr(self.nodata).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class BandStats:
    min: Tuple[float, ...]
    max: Tuple[float, ...]
    mean: Tuple[float, ...]
    std: Tuple[float, ...]
    valid_count: Tuple[int, ...]


def band_stats(raster: RasterImage) -> BandStats:
    """Per-band min/max/mean/population-std over non-nodata pixels."""
    mins, maxs, means, stds, counts = [], [], [], [], []
    for b in range(raster.bands):
        band = raster.samples[b]
        if raster.nodata is not None:
            vals = band[band != raster.nodata]
        else:
            vals = band.ravel()
        if vals.size == 0:
            raise EmptyBand(f"band {b} has no valid pixels")
        mins.append(float(vals.min()))
        maxs.append(float(vals.max()))
        means.append(float(vals.mean()))
        stds.append(float(vals.std()))  # population std
        counts.append(int(vals.size))
    return BandStats(tuple(mins), tuple(maxs), tuple(means), tuple(stds), tuple(counts))


def write_gridpack(raster: RasterImage, dir_path) -> Path:
    """Write header.json + band_<i>.bin; returns the header path."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    header = {
        "width": raster.width,
        "height": raster.height,
        "bands": raster.bands,
        "dtype": GRIDPACK_DTYPE,
        "geotransform": raster.geo.to_list(),
    }
    if raster.nodata is not None:
        header["nodata"] = raster.nodata
    if raster.crs.epsg is not None:
        header["epsg"] = raster.crs.epsg
    if raster.band_names is not None:
        header["band_names"] = list(raster.band_names)
    header_path = dir_path / "header.json"
    header_path.write_text(json.dumps(header, indent=2))
    for b in range(raster.bands):
        data = np.ascontiguousarray(raster.samples[b], dtype="<f8")
        (dir_path / f"band_{b}.bin").write_bytes(data.tobytes())
    return header_path


def read_gridpack(header_path) -> RasterImage:
    header_path = Path(header_path)
    if header_path.is_dir():
        header_path = header_path / "header.json"
    try:
        header = json.loads(header_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptGridpack(f"cannot read header {header_path}: {exc}") from exc
    dtype = header.get("dtype")
    if dtype != GRIDPACK_DTYPE:
        raise UnsupportedGridpack(f"unknown dtype {dtype!r}")
    try:
        width = int(header["width"])
        height = int(header["height"])
        bands = int(header["bands"])
        geo = AffineTransform.from_list(header["geotransform"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptGridpack(f"bad header fields: {exc}") from exc
    expected = width * height * 8
    grids = []
    for b in range(bands):
        payload_path = header_path.parent / f"band_{b}.bin"
        try:
            payload = payload_path.read_bytes()
        except OSError as exc:
            raise CorruptGridpack(f"missing payload {payload_path}") from exc
        if len(payload) != expected:
            raise CorruptGridpack(
                f"band {b}: payload is {len(payload)} bytes, expected {expected}"
            )
        grids.append(np.frombuffer(payload, dtype="<f8").reshape(height, width))
    epsg = header.get("epsg")
    crs = CrsId.from_epsg(int(epsg)) if epsg is not None else CrsId.unknown()
    return RasterImage(
        width=width,
        height=height,
        bands=bands,
        samples=np.stack(grids).astype(np.float64),
        geo=geo,
        crs=crs,
        nodata=header.get("nodata"),
        band_names=header.get("band_names"),
    )


def render_preview(
    raster: RasterImage,
    band_triplet: Sequence[int] = (0, 1, 2),
    stretch: Tuple[float, float] = (2.0, 98.0),
) -> np.ndarray:
    """Percentile-stretched RGBA preview, shape (H, W, 4) uint8.

    Single-band rasters may pass the same index three times. Nodata pixels
    get alpha 0.
    """
    low, high = stretch
    if not (0.0 <= low < high <= 100.0):
        raise ValueError(f"bad stretch percentiles ({low}, {high})")
    for b in band_triplet:
        if not (0 <= b < raster.bands):
            raise BadBandSelection(f"band {b} out of range 0..{raster.bands - 1}")
    valid = raster.valid_mask()
    out = np.zeros((raster.height, raster.width, 4), dtype=np.uint8)
    for channel, b in enumerate(band_triplet[:3]):
        band = raster.samples[b]
        vals = band[valid]
        if vals.size == 0:
            continue
        lo = float(np.percentile(vals, low))
        hi = float(np.percentile(vals, high))
        if hi <= lo:
            scaled = np.where(band >= lo, 255.0, 0.0)
        else:
            scaled = (band - lo) / (hi - lo) * 255.0
        out[:, :, channel] = np.clip(scaled, 0.0, 255.0).astype(np.uint8)
    out[:, :, 3] = np.where(valid, 255, 0)
    return out


def encode_png(rgba: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()

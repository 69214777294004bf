"""Synthetic delta scene generator for demos and end-to-end tests.

Builds a 3-band raster of soil, water and vegetation with Gaussian band
noise tight enough that the classes are almost perfectly separable, and
returns the ground-truth class map alongside.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .classify import ClassMap
from .georef import AffineTransform, CrsId
from .raster import RasterImage

SOIL, WATER, VEGETATION = 1, 2, 3

# Per-class band means (3 bands); pairwise distances ~90+ DN against sigma 6,
# so the Bayes error is far below 1%.
CLASS_MEANS = {
    SOIL: (120.0, 90.0, 60.0),
    WATER: (30.0, 50.0, 95.0),
    VEGETATION: (55.0, 130.0, 65.0),
}
NOISE_SIGMA = 6.0

PALETTE = [
    {"id": SOIL, "name": "soil", "color": [168, 132, 88]},
    {"id": WATER, "name": "water", "color": [40, 90, 180]},
    {"id": VEGETATION, "name": "vegetation", "color": [60, 150, 70]},
]


def delta_truth(size: int = 256) -> np.ndarray:
    """Ground-truth class grid: a branching water fan over soil with
    vegetation banks."""
    truth = np.full((size, size), SOIL, dtype=np.int32)
    yy, xx = np.mgrid[0:size, 0:size]

    # Main river entering from the top, fanning into distributary channels.
    cx = size / 2.0
    river = (np.abs(xx - cx) < size * 0.04) & (yy < size * 0.35)
    truth[river] = WATER

    apex_y = size * 0.35
    for angle_deg in (-55, -30, -10, 10, 30, 55):
        ang = np.radians(angle_deg)
        dx = np.sin(ang)
        dy = np.cos(ang)
        # Signed distance from the channel center line.
        px = xx - cx
        py = yy - apex_y
        along = px * dx + py * dy
        across = np.abs(px * dy - py * dx)
        width = size * 0.018 + 0.04 * np.maximum(along, 0)
        channel = (along > 0) & (along < size * 0.55) & (across < width)
        truth[channel] = WATER

    # A coastal waterbody along the bottom edge.
    truth[yy > size * 0.88] = WATER

    # Vegetation patches on the interdistributary lobes.
    rng = np.random.default_rng(7)
    for _ in range(10):
        r = rng.uniform(size * 0.05, size * 0.12)
        py = rng.uniform(size * 0.45, size * 0.8)
        px = rng.uniform(size * 0.1, size * 0.9)
        blob = (yy - py) ** 2 + (xx - px) ** 2 < r * r
        truth[blob & (truth == SOIL)] = VEGETATION

    return truth


def generate_delta(
    size: int = 256, seed: int = 1234
) -> Tuple[RasterImage, ClassMap]:
    truth = delta_truth(size)
    rng = np.random.default_rng(seed)
    bands = np.zeros((3, size, size), dtype=np.float64)
    for cid, means in CLASS_MEANS.items():
        mask = truth == cid
        for b in range(3):
            bands[b][mask] = means[b]
    bands += rng.normal(0.0, NOISE_SIGMA, size=bands.shape)

    # Wax Lake Delta neighborhood: UTM zone 15N, 30 m Landsat pixels.
    geo = AffineTransform(30.0, 0.0, 660000.0, 0.0, -30.0, 3290000.0)
    raster = RasterImage(
        width=size,
        height=size,
        bands=3,
        samples=bands,
        geo=geo,
        crs=CrsId.from_epsg(32615),
        band_names=["red", "green", "blue"],
    )
    truth_map = ClassMap(size, size, truth, class_table=(SOIL, WATER, VEGETATION))
    return raster, truth_map

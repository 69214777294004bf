"""Minimal baseline GeoTIFF reader.

Supported subset: TIFF 6.0, little- or big-endian, striped or tiled layout,
chunky or planar configuration, Compression 1 (none) or 8 (DEFLATE),
BitsPerSample 8/16/32 with SampleFormat unsigned/signed/IEEE-float.
Georeferencing comes from ModelPixelScale + ModelTiepoint; the EPSG code from
GeoKeyDirectory keys 3072 (projected) or 2048 (geographic). Anything outside
the subset raises UnsupportedTiff with the offending tag id.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CorruptTiff, MissingGeoreference, UnsupportedTiff
from .georef import AffineTransform, CrsId
from .raster import RasterImage

TAG_IMAGE_WIDTH = 256
TAG_IMAGE_LENGTH = 257
TAG_BITS_PER_SAMPLE = 258
TAG_COMPRESSION = 259
TAG_STRIP_OFFSETS = 273
TAG_SAMPLES_PER_PIXEL = 277
TAG_ROWS_PER_STRIP = 278
TAG_STRIP_BYTE_COUNTS = 279
TAG_PLANAR_CONFIG = 284
TAG_TILE_WIDTH = 322
TAG_TILE_LENGTH = 323
TAG_TILE_OFFSETS = 324
TAG_TILE_BYTE_COUNTS = 325
TAG_SAMPLE_FORMAT = 339
TAG_MODEL_PIXEL_SCALE = 33550
TAG_MODEL_TIEPOINT = 33922
TAG_GEO_KEY_DIRECTORY = 34735
TAG_GDAL_NODATA = 42113

GEOKEY_GEOGRAPHIC_TYPE = 2048
GEOKEY_PROJECTED_CS_TYPE = 3072

# TIFF field type -> (struct code, byte size); rationals handled separately.
_FIELD_TYPES = {
    1: ("B", 1),   # BYTE
    2: ("c", 1),   # ASCII
    3: ("H", 2),   # SHORT
    4: ("I", 4),   # LONG
    5: (None, 8),  # RATIONAL
    6: ("b", 1),   # SBYTE
    7: ("B", 1),   # UNDEFINED
    8: ("h", 2),   # SSHORT
    9: ("i", 4),   # SLONG
    10: (None, 8),  # SRATIONAL
    11: ("f", 4),  # FLOAT
    12: ("d", 8),  # DOUBLE
}


def _read_tag_values(data: bytes, endian: str, ftype: int, count: int, raw: bytes):
    if ftype not in _FIELD_TYPES:
        return None
    code, size = _FIELD_TYPES[ftype]
    total = size * count
    if total <= 4:
        payload = raw[:total]
    else:
        (offset,) = struct.unpack(endian + "I", raw)
        if offset + total > len(data):
            raise CorruptTiff("tag payload beyond end of file", offset=offset)
        payload = data[offset:offset + total]
    if ftype == 2:
        return payload.rstrip(b"\x00").decode("ascii", errors="replace")
    if ftype in (5, 10):
        sub = "I" if ftype == 5 else "i"
        parts = struct.unpack(endian + sub * (2 * count), payload)
        return [parts[2 * i] / parts[2 * i + 1] for i in range(count)]
    return list(struct.unpack(endian + code * count, payload))


def _parse_ifd(data: bytes, endian: str, ifd_offset: int) -> Dict[int, list]:
    if ifd_offset + 2 > len(data):
        raise CorruptTiff("IFD offset beyond end of file", offset=ifd_offset)
    (n_entries,) = struct.unpack_from(endian + "H", data, ifd_offset)
    tags: Dict[int, list] = {}
    pos = ifd_offset + 2
    for _ in range(n_entries):
        if pos + 12 > len(data):
            raise CorruptTiff("truncated IFD entry", offset=pos)
        tag, ftype, count = struct.unpack_from(endian + "HHI", data, pos)
        raw = data[pos + 8:pos + 12]
        values = _read_tag_values(data, endian, ftype, count, raw)
        if values is not None:
            tags[tag] = values
        pos += 12
    return tags


def _decode_chunk(
    chunk: bytes, compression: int, expected: int, offset: int
) -> bytes:
    if compression == 8:
        try:
            chunk = zlib.decompress(chunk)
        except zlib.error as exc:
            raise CorruptTiff(f"bad DEFLATE stream: {exc}", offset=offset) from exc
    if len(chunk) < expected:
        raise CorruptTiff(
            f"chunk holds {len(chunk)} bytes, expected {expected}", offset=offset
        )
    return chunk[:expected]


def _sample_dtype(endian: str, bits: int, fmt: int) -> np.dtype:
    e = "<" if endian == "<" else ">"
    if fmt == 1:
        return np.dtype(e + {8: "u1", 16: "u2", 32: "u4"}[bits])
    if fmt == 2:
        return np.dtype(e + {8: "i1", 16: "i2", 32: "i4"}[bits])
    if fmt == 3:
        if bits != 32:
            raise UnsupportedTiff(f"float samples must be 32-bit, got {bits}",
                                  tag=TAG_BITS_PER_SAMPLE)
        return np.dtype(e + "f4")
    raise UnsupportedTiff(f"unsupported SampleFormat {fmt}", tag=TAG_SAMPLE_FORMAT)


def read_geotiff(path) -> RasterImage:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 8:
        raise CorruptTiff("file shorter than TIFF header", offset=0)
    order = data[:2]
    if order == b"II":
        endian = "<"
    elif order == b"MM":
        endian = ">"
    else:
        raise CorruptTiff(f"bad byte-order mark {order!r}", offset=0)
    magic, ifd_offset = struct.unpack_from(endian + "HI", data, 2)
    if magic != 42:
        raise CorruptTiff(f"bad TIFF magic {magic}", offset=2)

    tags = _parse_ifd(data, endian, ifd_offset)

    def req(tag: int, default=None):
        if tag in tags:
            return tags[tag]
        if default is not None:
            return default
        raise CorruptTiff(f"missing required tag {tag}")

    width = int(req(TAG_IMAGE_WIDTH)[0])
    height = int(req(TAG_IMAGE_LENGTH)[0])
    spp = int(tags.get(TAG_SAMPLES_PER_PIXEL, [1])[0])
    bits_list = tags.get(TAG_BITS_PER_SAMPLE, [8] * spp)
    if len(set(bits_list)) != 1:
        raise UnsupportedTiff("mixed per-band bit depths", tag=TAG_BITS_PER_SAMPLE)
    bits = int(bits_list[0])
    if bits not in (8, 16, 32):
        raise UnsupportedTiff(f"BitsPerSample {bits}", tag=TAG_BITS_PER_SAMPLE)
    compression = int(tags.get(TAG_COMPRESSION, [1])[0])
    if compression not in (1, 8):
        raise UnsupportedTiff(f"Compression {compression}", tag=TAG_COMPRESSION)
    fmt_list = tags.get(TAG_SAMPLE_FORMAT, [1] * spp)
    if len(set(fmt_list)) != 1:
        raise UnsupportedTiff("mixed sample formats", tag=TAG_SAMPLE_FORMAT)
    fmt = int(fmt_list[0])
    planar = int(tags.get(TAG_PLANAR_CONFIG, [1])[0])
    if planar not in (1, 2):
        raise UnsupportedTiff(f"PlanarConfiguration {planar}", tag=TAG_PLANAR_CONFIG)
    dtype = _sample_dtype(endian, bits, fmt)
    bpp = bits // 8

    tiled = TAG_TILE_OFFSETS in tags
    out = np.zeros((spp, height, width), dtype=np.float64)

    if tiled:
        tw = int(req(TAG_TILE_WIDTH)[0])
        th = int(req(TAG_TILE_LENGTH)[0])
        offsets = [int(v) for v in req(TAG_TILE_OFFSETS)]
        counts = [int(v) for v in req(TAG_TILE_BYTE_COUNTS)]
        tiles_across = (width + tw - 1) // tw
        tiles_down = (height + th - 1) // th
        per_plane = tiles_across * tiles_down
        n_planes = spp if planar == 2 else 1
        chan_per_chunk = 1 if planar == 2 else spp
        if len(offsets) != per_plane * n_planes:
            raise CorruptTiff(
                f"expected {per_plane * n_planes} tiles, found {len(offsets)}"
            )
        for idx, (off, cnt) in enumerate(zip(offsets, counts)):
            plane = idx // per_plane
            t = idx % per_plane
            ty, tx = divmod(t, tiles_across)
            expected = tw * th * bpp * chan_per_chunk
            chunk = _decode_chunk(data[off:off + cnt], compression, expected, off)
            arr = np.frombuffer(chunk, dtype=dtype)
            r0, c0 = ty * th, tx * tw
            rows = min(th, height - r0)
            cols = min(tw, width - c0)
            if planar == 2:
                grid = arr.reshape(th, tw)
                out[plane, r0:r0 + rows, c0:c0 + cols] = grid[:rows, :cols]
            else:
                grid = arr.reshape(th, tw, spp)
                for b in range(spp):
                    out[b, r0:r0 + rows, c0:c0 + cols] = grid[:rows, :cols, b]
    else:
        offsets = [int(v) for v in req(TAG_STRIP_OFFSETS)]
        counts = [int(v) for v in req(TAG_STRIP_BYTE_COUNTS)]
        rps = int(tags.get(TAG_ROWS_PER_STRIP, [height])[0])
        strips_per_plane = (height + rps - 1) // rps
        n_planes = spp if planar == 2 else 1
        chan_per_chunk = 1 if planar == 2 else spp
        if len(offsets) != strips_per_plane * n_planes:
            raise CorruptTiff(
                f"expected {strips_per_plane * n_planes} strips, found {len(offsets)}"
            )
        for idx, (off, cnt) in enumerate(zip(offsets, counts)):
            plane = idx // strips_per_plane
            s = idx % strips_per_plane
            r0 = s * rps
            rows = min(rps, height - r0)
            expected = rows * width * bpp * chan_per_chunk
            chunk = _decode_chunk(data[off:off + cnt], compression, expected, off)
            arr = np.frombuffer(chunk, dtype=dtype)
            if planar == 2:
                out[plane, r0:r0 + rows, :] = arr.reshape(rows, width)
            else:
                grid = arr.reshape(rows, width, spp)
                for b in range(spp):
                    out[b, r0:r0 + rows, :] = grid[:, :, b]

    geo = _geotransform(tags)
    crs = _crs_from_geokeys(tags.get(TAG_GEO_KEY_DIRECTORY))
    nodata = None
    if TAG_GDAL_NODATA in tags:
        try:
            nodata = float(str(tags[TAG_GDAL_NODATA]).strip())
        except ValueError:
            nodata = None

    return RasterImage(
        width=width,
        height=height,
        bands=spp,
        samples=out,
        geo=geo,
        crs=crs,
        nodata=nodata,
    )


def _geotransform(tags: Dict[int, list]) -> AffineTransform:
    scale = tags.get(TAG_MODEL_PIXEL_SCALE)
    tie = tags.get(TAG_MODEL_TIEPOINT)
    if scale is None or tie is None or len(tie) < 6 or len(scale) < 2:
        raise MissingGeoreference("ModelPixelScale + ModelTiepoint required")
    # Tiepoint: raster (i, j, k) -> model (x, y, z); anchored at pixel (0,0).
    i, j, _k, x, y, _z = (float(v) for v in tie[:6])
    sx, sy = float(scale[0]), float(scale[1])
    tie_x = x - sx * i
    tie_y = y + sy * j
    return AffineTransform(sx, 0.0, tie_x, 0.0, -sy, tie_y)


def _crs_from_geokeys(directory: Optional[list]) -> CrsId:
    if not directory or len(directory) < 4:
        return CrsId.unknown()
    n_keys = int(directory[3])
    epsg = None
    for k in range(n_keys):
        base = 4 + 4 * k
        if base + 4 > len(directory):
            break
        key_id, location, count, value = (int(v) for v in directory[base:base + 4])
        if key_id in (GEOKEY_PROJECTED_CS_TYPE, GEOKEY_GEOGRAPHIC_TYPE):
            if location == 0 and count == 1:
                # Projected key wins over geographic when both appear.
                if epsg is None or key_id == GEOKEY_PROJECTED_CS_TYPE:
                    epsg = value
    if epsg is None or epsg in (32767, 0):
        return CrsId.unknown()
    return CrsId.from_epsg(epsg)

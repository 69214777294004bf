"""Hand-rolled TIFF fixture writer for parser tests.

Builds minimal baseline TIFF 6.0 files byte by byte so the reader is tested
against independently constructed input, not against its own serialization.
"""

from __future__ import annotations

import struct
import zlib
from typing import List, Optional, Sequence

import numpy as np

_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 11: 4, 12: 8}
_TYPE_CODES = {1: "B", 2: "s", 3: "H", 4: "I", 11: "f", 12: "d"}


def _pack_values(endian: str, ftype: int, values) -> bytes:
    if ftype == 2:
        return values  # already bytes, NUL-terminated by caller
    code = _TYPE_CODES[ftype]
    return struct.pack(endian + code * len(values), *values)


def build_tiff(
    bands: Sequence[np.ndarray],
    endian: str = "<",
    bits: int = 8,
    sample_format: int = 1,
    compression: int = 1,
    planar: int = 1,
    rows_per_strip: Optional[int] = None,
    tile_size: Optional[tuple] = None,  # (tile_width, tile_height)
    pixel_scale: tuple = (30.0, 30.0),
    tiepoint: tuple = (0.0, 0.0, 0.0, 600000.0, 3300000.0, 0.0),
    epsg: Optional[int] = 32615,
    epsg_key: int = 3072,
    nodata: Optional[float] = None,
    omit_georef: bool = False,
) -> bytes:
    height, width = bands[0].shape
    spp = len(bands)
    dtype = {
        (8, 1): "u1", (16, 1): "u2", (32, 1): "u4",
        (8, 2): "i1", (16, 2): "i2", (32, 2): "i4",
        (32, 3): "f4",
    }[(bits, sample_format)]
    np_dtype = np.dtype(("<" if endian == "<" else ">") + dtype)
    cube = np.stack([b.astype(np_dtype) for b in bands])  # (spp, H, W)

    chunks: List[bytes] = []
    if tile_size:
        tw, th = tile_size
        tiles_across = (width + tw - 1) // tw
        tiles_down = (height + th - 1) // th
        plane_iter = range(spp) if planar == 2 else [None]
        for plane in plane_iter:
            for ty in range(tiles_down):
                for tx in range(tiles_across):
                    tile = np.zeros(
                        (th, tw) if planar == 2 else (th, tw, spp),
                        dtype=np_dtype,
                    )
                    r0, c0 = ty * th, tx * tw
                    rows = min(th, height - r0)
                    cols = min(tw, width - c0)
                    if planar == 2:
                        tile[:rows, :cols] = cube[plane, r0:r0 + rows, c0:c0 + cols]
                    else:
                        for b in range(spp):
                            tile[:rows, :cols, b] = cube[b, r0:r0 + rows, c0:c0 + cols]
                    chunks.append(tile.tobytes())
    else:
        rps = rows_per_strip or height
        plane_iter = range(spp) if planar == 2 else [None]
        for plane in plane_iter:
            for r0 in range(0, height, rps):
                rows = min(rps, height - r0)
                if planar == 2:
                    strip = cube[plane, r0:r0 + rows, :]
                else:
                    strip = np.moveaxis(cube[:, r0:r0 + rows, :], 0, -1)
                chunks.append(np.ascontiguousarray(strip).tobytes())

    if compression == 8:
        chunks = [zlib.compress(c) for c in chunks]
    elif compression != 1:
        pass  # declared-but-unsupported compression: bytes kept as-is

    tags = []  # (tag, ftype, values)
    tags.append((256, 4, [width]))
    tags.append((257, 4, [height]))
    tags.append((258, 3, [bits] * spp))
    tags.append((259, 3, [compression]))
    tags.append((262, 3, [1]))
    tags.append((277, 3, [spp]))
    if tile_size:
        tw, th = tile_size
        tags.append((322, 4, [tw]))
        tags.append((323, 4, [th]))
        tags.append((324, 4, None))  # offsets patched below
        tags.append((325, 4, [len(c) for c in chunks]))
    else:
        tags.append((273, 4, None))
        tags.append((278, 4, [rows_per_strip or height]))
        tags.append((279, 4, [len(c) for c in chunks]))
    tags.append((284, 3, [planar]))
    tags.append((339, 3, [sample_format] * spp))
    if not omit_georef:
        tags.append((33550, 12, [pixel_scale[0], pixel_scale[1], 0.0]))
        tags.append((33922, 12, list(tiepoint)))
    if epsg is not None:
        tags.append((34735, 3, [1, 1, 0, 1, epsg_key, 0, 1, epsg]))
    if nodata is not None:
        text = f"{nodata:g}".encode("ascii") + b"\x00"
        tags.append((42113, 2, text))
    tags.sort(key=lambda t: t[0])

    header = struct.pack(endian + "2sHI", b"II" if endian == "<" else b"MM", 42, 8)
    n = len(tags)
    ifd_size = 2 + 12 * n + 4
    extra_offset = 8 + ifd_size  # external tag payloads start here

    extra = b""
    entries = b""
    pending_chunk_tag = None
    chunk_offsets_pos = None
    for tag, ftype, values in tags:
        if values is None:  # strip/tile offsets: patched after layout is known
            count = len(chunks)
            size = 4 * count
            if size <= 4:
                chunk_offsets_pos = 8 + len(entries) + 2 + 8  # inline
                payload = b"\x00" * 4
                entries += struct.pack(endian + "HHI", tag, ftype, count) + payload
            else:
                chunk_offsets_pos = extra_offset + len(extra)
                entries += struct.pack(endian + "HHII", tag, ftype, count,
                                       extra_offset + len(extra))
                extra += b"\x00" * size
            pending_chunk_tag = (tag, count)
            continue
        if ftype == 2:
            payload = values
            count = len(payload)
        else:
            payload = _pack_values(endian, ftype, values)
            count = len(values)
        if len(payload) <= 4:
            entries += struct.pack(endian + "HHI", tag, ftype, count)
            entries += payload + b"\x00" * (4 - len(payload))
        else:
            entries += struct.pack(endian + "HHII", tag, ftype, count,
                                   extra_offset + len(extra))
            extra += payload

    data_offset = extra_offset + len(extra)
    chunk_offsets = []
    pos = data_offset
    for c in chunks:
        chunk_offsets.append(pos)
        pos += len(c)

    blob = bytearray()
    blob += header
    blob += struct.pack(endian + "H", n)
    blob += entries
    blob += struct.pack(endian + "I", 0)  # no next IFD
    blob += extra
    for c in chunks:
        blob += c

    # Patch chunk offsets in place.
    packed = struct.pack(endian + "I" * len(chunk_offsets), *chunk_offsets)
    blob[chunk_offsets_pos:chunk_offsets_pos + len(packed)] = packed
    return bytes(blob)

import struct

import numpy as np
import pytest

from deltaforge.errors import CorruptTiff, MissingGeoreference, UnsupportedTiff
from deltaforge.geotiff import read_geotiff

from tiff_builder import build_tiff


def write(tmp_path, blob, name="f.tif"):
    p = tmp_path / name
    p.write_bytes(blob)
    return p


class TestBasicParsing:
    def test_2x2_uint8_little_endian(self, tmp_path):
        # Pixel bytes [1,2,3,4] laid out row-major by the builder; verified by
        # manual IFD byte accounting.
        band = np.array([[1, 2], [3, 4]], dtype=np.uint8)
        r = read_geotiff(write(tmp_path, build_tiff([band])))
        assert r.width == r.height == 2
        assert r.bands == 1
        assert r.samples[0].tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_2x2_big_endian_identical(self, tmp_path):
        band = np.array([[1, 2], [3, 4]], dtype=np.uint8)
        le = read_geotiff(write(tmp_path, build_tiff([band], endian="<"), "le.tif"))
        be = read_geotiff(write(tmp_path, build_tiff([band], endian=">"), "be.tif"))
        assert np.array_equal(le.samples, be.samples)

    def test_unsupported_compression_lzw(self, tmp_path):
        band = np.zeros((2, 2), dtype=np.uint8)
        blob = build_tiff([band], compression=5)
        with pytest.raises(UnsupportedTiff) as err:
            read_geotiff(write(tmp_path, blob))
        assert err.value.tag == 259

    @pytest.mark.parametrize("endian", ["<", ">"])
    def test_deflate_equals_uncompressed(self, tmp_path, endian):
        rng = np.random.default_rng(2)
        band = rng.integers(0, 255, (7, 5)).astype(np.uint8)
        raw = read_geotiff(write(
            tmp_path, build_tiff([band], endian=endian, compression=1), "raw.tif"))
        deflated = read_geotiff(write(
            tmp_path, build_tiff([band], endian=endian, compression=8), "z.tif"))
        assert np.array_equal(raw.samples, deflated.samples)

    @pytest.mark.parametrize("bits,fmt,dtype", [
        (8, 1, np.uint8), (16, 1, np.uint16), (32, 1, np.uint32),
        (8, 2, np.int8), (16, 2, np.int16), (32, 2, np.int32),
        (32, 3, np.float32),
    ])
    def test_sample_types(self, tmp_path, bits, fmt, dtype):
        rng = np.random.default_rng(bits + fmt)
        if fmt == 3:
            band = rng.normal(0, 100, (3, 4)).astype(dtype)
        else:
            info = np.iinfo(dtype)
            band = rng.integers(max(info.min, -1000), min(info.max, 1000),
                                (3, 4)).astype(dtype)
        r = read_geotiff(write(tmp_path, build_tiff(
            [band], bits=bits, sample_format=fmt)))
        assert np.array_equal(r.samples[0], band.astype(np.float64))

    def test_multiband_chunky_vs_planar(self, tmp_path):
        rng = np.random.default_rng(9)
        bands = [rng.integers(0, 255, (5, 6)).astype(np.uint8) for _ in range(3)]
        chunky = read_geotiff(write(tmp_path, build_tiff(bands, planar=1), "c.tif"))
        planar = read_geotiff(write(tmp_path, build_tiff(bands, planar=2), "p.tif"))
        assert chunky.bands == 3
        assert np.array_equal(chunky.samples, planar.samples)
        for b in range(3):
            assert np.array_equal(chunky.samples[b], bands[b].astype(np.float64))

    def test_striped_layout(self, tmp_path):
        rng = np.random.default_rng(4)
        band = rng.integers(0, 255, (10, 4)).astype(np.uint8)
        r = read_geotiff(write(tmp_path, build_tiff([band], rows_per_strip=3)))
        assert np.array_equal(r.samples[0], band.astype(np.float64))

    def test_tiled_layout_with_padding(self, tmp_path):
        rng = np.random.default_rng(6)
        band = rng.integers(0, 255, (10, 11)).astype(np.uint8)
        r = read_geotiff(write(tmp_path, build_tiff([band], tile_size=(4, 4))))
        assert np.array_equal(r.samples[0], band.astype(np.float64))

    def test_tiled_deflate_multiband(self, tmp_path):
        rng = np.random.default_rng(8)
        bands = [rng.integers(0, 65535, (9, 7)).astype(np.uint16) for _ in range(2)]
        r = read_geotiff(write(tmp_path, build_tiff(
            bands, bits=16, tile_size=(8, 4), compression=8)))
        for b in range(2):
            assert np.array_equal(r.samples[b], bands[b].astype(np.float64))


class TestGeoMetadata:
    def test_geotransform_assembly(self, tmp_path):
        band = np.zeros((2, 2), dtype=np.uint8)
        blob = build_tiff([band], pixel_scale=(30.0, 30.0),
                          tiepoint=(0, 0, 0, 600000.0, 3300000.0, 0))
        r = read_geotiff(write(tmp_path, blob))
        assert r.geo.a == 30.0
        assert r.geo.c == 600000.0
        assert r.geo.e == -30.0
        assert r.geo.f == 3300000.0

    def test_projected_epsg(self, tmp_path):
        band = np.zeros((2, 2), dtype=np.uint8)
        r = read_geotiff(write(tmp_path, build_tiff([band], epsg=32615)))
        assert r.crs.kind == "utm"
        assert r.crs.zone == 15
        assert r.crs.hemisphere == "N"

    def test_geographic_epsg(self, tmp_path):
        band = np.zeros((2, 2), dtype=np.uint8)
        r = read_geotiff(write(
            tmp_path, build_tiff([band], epsg=4326, epsg_key=2048)))
        assert r.crs.kind == "wgs84"

    def test_missing_geokeys_crs_unknown(self, tmp_path):
        band = np.zeros((2, 2), dtype=np.uint8)
        r = read_geotiff(write(tmp_path, build_tiff([band], epsg=None)))
        assert r.crs.kind == "unknown"
        assert r.geo.a == 30.0  # geotransform still applied

    def test_missing_georeference(self, tmp_path):
        band = np.zeros((2, 2), dtype=np.uint8)
        with pytest.raises(MissingGeoreference):
            read_geotiff(write(tmp_path, build_tiff([band], omit_georef=True)))

    def test_nodata_tag(self, tmp_path):
        band = np.zeros((2, 2), dtype=np.uint8)
        r = read_geotiff(write(tmp_path, build_tiff([band], nodata=0)))
        assert r.nodata == 0.0


class TestCorruption:
    def test_truncated_strip(self, tmp_path):
        band = np.arange(64, dtype=np.uint8).reshape(8, 8)
        blob = build_tiff([band])
        with pytest.raises(CorruptTiff) as err:
            read_geotiff(write(tmp_path, blob[:-20]))
        assert err.value.offset is not None

    def test_bad_magic(self, tmp_path):
        with pytest.raises(CorruptTiff):
            read_geotiff(write(tmp_path, b"II\x2b\x00" + b"\x00" * 10))

    def test_not_a_tiff(self, tmp_path):
        with pytest.raises(CorruptTiff):
            read_geotiff(write(tmp_path, b"PNG_not_tiff_at_all"))

import json
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from deltaforge.georef import AffineTransform, CrsId
from deltaforge.osm import lint_osm_file
from deltaforge.raster import RasterImage, write_gridpack
from deltaforge.server import create_app

PALETTE = [
    {"id": 1, "name": "soil", "color": [168, 132, 88]},
    {"id": 2, "name": "water", "color": [40, 90, 180]},
]


@pytest.fixture
def scene(tmp_path):
    rng = np.random.default_rng(4)
    bands = np.zeros((2, 16, 16))
    bands[0, :, :8] = 100.0
    bands[0, :, 8:] = 20.0
    bands[1, :, :8] = 30.0
    bands[1, :, 8:] = 90.0
    bands += rng.normal(0, 2.0, bands.shape)
    r = RasterImage(width=16, height=16, bands=2, samples=bands,
                    geo=AffineTransform(30, 0, 660000, 0, -30, 3290000),
                    crs=CrsId.from_epsg(32615))
    d = tmp_path / "scene"
    write_gridpack(r, d)
    return d


@pytest.fixture
def client(tmp_path, scene):
    app = create_app(tmp_path / "sessions")
    with TestClient(app) as c:
        yield c


def create_session(client, scene):
    resp = client.post("/sessions", json={
        "raster_path": str(scene),
        "palette": PALETTE,
    })
    assert resp.status_code == 201
    return resp.json()["id"]


def post_labels(client, sid, samples):
    return client.post(f"/sessions/{sid}/labels", json={
        "samples": [{"row": r, "col": c, "class": k} for r, c, k in samples],
    })


def half_labels():
    out = []
    for i in range(12):
        out.append((1 + i, 1 + i % 6, 1))
        out.append((1 + i, 9 + i % 6, 2))
    return out


class TestSessions:
    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope").status_code == 404

    def test_create_and_get(self, client, scene):
        sid = create_session(client, scene)
        info = client.get(f"/sessions/{sid}").json()
        assert info["raster"]["width"] == 16
        assert info["label_counts"] == {}
        assert info["status"] == "idle"
        assert [p["name"] for p in info["palette"]] == ["soil", "water"]

    def test_create_bad_raster_400(self, client):
        resp = client.post("/sessions", json={
            "raster_path": "/does/not/exist",
            "palette": PALETTE,
        })
        assert resp.status_code == 400

    def test_sessions_reload_from_disk(self, tmp_path, scene):
        root = tmp_path / "sessions"
        app = create_app(root)
        with TestClient(app) as c:
            sid = create_session(c, scene)
            post_labels(c, sid, [(2, 2, 1)])
        app2 = create_app(root)
        with TestClient(app2) as c2:
            info = c2.get(f"/sessions/{sid}")
            assert info.status_code == 200
            assert info.json()["label_counts"] == {"1": 1}


class TestLabels:
    def test_post_then_get(self, client, scene):
        sid = create_session(client, scene)
        resp = post_labels(client, sid, [(2, 2, 1), (3, 9, 2)])
        assert resp.status_code == 200
        assert resp.json()["totals"] == {"1": 1, "2": 1}
        got = client.get(f"/sessions/{sid}/labels").json()
        assert [(s["row"], s["col"], s["class"]) for s in got["samples"]] \
            == [(2, 2, 1), (3, 9, 2)]

    def test_bad_label_400(self, client, scene):
        sid = create_session(client, scene)
        assert post_labels(client, sid, [(99, 0, 1)]).status_code == 400
        assert post_labels(client, sid, [(2, 2, 42)]).status_code == 400

    def test_missing_field_400(self, client, scene):
        sid = create_session(client, scene)
        resp = client.post(f"/sessions/{sid}/labels",
                           json={"samples": [{"row": 1}]})
        assert resp.status_code == 400


class TestPipeline:
    def run_to_features(self, client, scene):
        sid = create_session(client, scene)
        assert post_labels(client, sid, half_labels()).status_code == 200
        train = client.post(f"/sessions/{sid}/train", json={"model": "svm"})
        assert train.status_code == 200
        assert train.json()["holdout_accuracy"] == 1.0
        assert client.post(f"/sessions/{sid}/classify", json={}).status_code == 200
        vec = client.post(f"/sessions/{sid}/vectorize", json={"min_pixels": 1})
        assert vec.status_code == 200
        assert vec.json()["inserted"] >= 2
        return sid

    def test_full_loop(self, client, scene):
        sid = self.run_to_features(client, scene)
        feats = client.get(f"/sessions/{sid}/features").json()["features"]
        assert all(f["stage"] == "auto" for f in feats)

        # stage filter
        none = client.get(f"/sessions/{sid}/features",
                          params={"stage": "validated"}).json()["features"]
        assert none == []

        # class filter matches a linear scan
        water = client.get(f"/sessions/{sid}/features",
                           params={"class": "2"}).json()["features"]
        assert water == [f for f in feats if f["class_id"] == 2]

        # overlay and preview render
        assert client.get(f"/sessions/{sid}/preview.png").headers[
            "content-type"] == "image/png"
        assert client.get(f"/sessions/{sid}/overlay.png").status_code == 200

    def test_train_before_labels_400(self, client, scene):
        sid = create_session(client, scene)
        assert client.post(f"/sessions/{sid}/train",
                           json={}).status_code == 400

    def test_classify_before_train_400(self, client, scene):
        sid = create_session(client, scene)
        assert client.post(f"/sessions/{sid}/classify",
                           json={}).status_code == 400

    def test_overlay_before_classify_400(self, client, scene):
        sid = create_session(client, scene)
        assert client.get(f"/sessions/{sid}/overlay.png").status_code == 400

    def test_bad_bbox_query_400(self, client, scene):
        sid = create_session(client, scene)
        resp = client.get(f"/sessions/{sid}/features",
                          params={"bbox": "5,5,1,1"})
        assert resp.status_code == 400


class TestPatch:
    def prepared(self, client, scene):
        sid = TestPipeline().run_to_features(client, scene)
        feats = client.get(f"/sessions/{sid}/features").json()["features"]
        return sid, feats

    def test_patch_geometry_increments_version(self, client, scene):
        sid, feats = self.prepared(client, scene)
        target = feats[0]
        geom = target["geometry"]
        resp = client.patch(f"/sessions/{sid}/features/{target['id']}",
                            json={"geometry": geom, "stage": "edited"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["version"] == target["version"] + 1
        assert body["stage"] == "edited"

    def test_patch_stage_to_validated(self, client, scene):
        sid, feats = self.prepared(client, scene)
        fid = feats[0]["id"]
        resp = client.patch(f"/sessions/{sid}/features/{fid}",
                            json={"stage": "validated"})
        assert resp.status_code == 200
        # editing a validated feature is rejected
        bad = client.patch(f"/sessions/{sid}/features/{fid}",
                           json={"geometry": feats[0]["geometry"]})
        assert bad.status_code == 400

    def test_patch_unknown_feature_404(self, client, scene):
        sid, _ = self.prepared(client, scene)
        resp = client.patch(f"/sessions/{sid}/features/nope",
                            json={"stage": "validated"})
        assert resp.status_code == 404

    def test_patch_invalid_geometry_400(self, client, scene):
        sid, feats = self.prepared(client, scene)
        bad_geom = {"type": "Polygon",
                    "coordinates": [[[0, 0], [1, 0], [1, 1]]]}
        resp = client.patch(f"/sessions/{sid}/features/{feats[0]['id']}",
                            json={"geometry": bad_geom})
        assert resp.status_code == 400


class TestExportAndStatus:
    def test_export_osm_download(self, client, scene, tmp_path):
        sid = TestPipeline().run_to_features(client, scene)
        feats = client.get(f"/sessions/{sid}/features").json()["features"]
        for f in feats:
            client.patch(f"/sessions/{sid}/features/{f['id']}",
                         json={"stage": "validated"})
        resp = client.post(f"/sessions/{sid}/export", json={"format": "osm"})
        assert resp.status_code == 200
        assert "attachment" in resp.headers["content-disposition"]
        out = tmp_path / "dl.osm"
        out.write_bytes(resp.content)
        assert lint_osm_file(out) == []

    def test_export_geojson(self, client, scene):
        sid = TestPipeline().run_to_features(client, scene)
        resp = client.post(f"/sessions/{sid}/export",
                           json={"format": "geojson",
                                 "include_unvalidated": True})
        assert resp.status_code == 200
        fc = json.loads(resp.content)
        assert fc["type"] == "FeatureCollection"
        assert len(fc["features"]) >= 2

    def test_export_unknown_format_400(self, client, scene):
        sid = create_session(client, scene)
        resp = client.post(f"/sessions/{sid}/export", json={"format": "shp"})
        assert resp.status_code == 400

    def test_status_endpoint(self, client, scene):
        sid = create_session(client, scene)
        body = client.get(f"/sessions/{sid}/status").json()
        assert body == {"status": "idle", "busy": False}

    def test_concurrent_writes_conflict(self, client, scene):
        sid = create_session(client, scene)
        post_labels(client, sid, half_labels())
        # Hold the session's write lock as a stand-in for an in-flight train.
        managed = client.app.state.manager.get(sid)
        assert managed.lock.acquire(blocking=False)
        managed.status = "training"
        try:
            resp = client.post(f"/sessions/{sid}/train", json={})
            assert resp.status_code == 409
            status = client.get(f"/sessions/{sid}/status").json()
            assert status["busy"] is True
        finally:
            managed.status = "idle"
            managed.lock.release()
        # after release the train succeeds
        assert client.post(f"/sessions/{sid}/train", json={}).status_code == 200

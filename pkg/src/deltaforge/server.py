"""JSON-over-HTTP service hosting workflow sessions for the labeling UI.

Each session holds an exclusive write lock: concurrent mutating requests on
the same session answer 409. Reads serve from the in-memory session state.
Sessions persist to <root>/<session id>/ after every successful write.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Dict, List, Optional

from fastapi import FastAPI, HTTPException, Query as QueryParam, Request, Response
from pydantic import BaseModel

from . import workflow
from .errors import (
    BadLabel,
    BadPalette,
    DeltaforgeError,
    IllegalTransition,
    NotFound,
    RejectedGeometry,
)
from .store import Query


class CreateSessionRequest(BaseModel):
    raster_path: str
    palette: list | str
    config: Optional[dict] = None


class LabelsRequest(BaseModel):
    samples: List[dict]


class TrainRequest(BaseModel):
    model: str = "svm"


class ClassifyRequest(BaseModel):
    workers: int = 1


class VectorizeRequest(BaseModel):
    epsilon: Optional[float] = None
    skeleton: bool = False
    min_pixels: Optional[int] = None


class PatchFeatureRequest(BaseModel):
    geometry: Optional[dict] = None
    stage: Optional[str] = None


class ExportRequest(BaseModel):
    format: str
    include_unvalidated: bool = False


class _Managed:
    def __init__(self, session: workflow.Session):
        self.session = session
        self.lock = threading.Lock()
        self.status = "idle"


class SessionManager:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.sessions: Dict[str, _Managed] = {}
        self.dirs: Dict[str, Path] = {}  # directory name need not equal id
        for child in sorted(self.root.iterdir()) if self.root.exists() else []:
            if (child / "session.json").exists():
                try:
                    session = workflow.session_load(child)
                    self.sessions[session.id] = _Managed(session)
                    self.dirs[session.id] = child
                except DeltaforgeError:
                    continue

    def get(self, session_id: str) -> _Managed:
        managed = self.sessions.get(session_id)
        if managed is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown session {session_id}")
        return managed

    def dir_for(self, session_id: str) -> Path:
        return self.dirs.setdefault(session_id, self.root / session_id)

    def persist(self, managed: _Managed) -> None:
        workflow.session_save(managed.session, self.dir_for(managed.session.id))


def _http_error(exc: DeltaforgeError) -> HTTPException:
    if isinstance(exc, NotFound):
        return HTTPException(status_code=404, detail=str(exc))
    return HTTPException(status_code=400, detail=str(exc))


def create_app(root) -> FastAPI:
    app = FastAPI(title="deltaforge", version="0.1.0")
    manager = SessionManager(Path(root))
    app.state.manager = manager

    def write_guard(managed: _Managed, op: str):
        if not managed.lock.acquire(blocking=False):
            raise HTTPException(
                status_code=409,
                detail=f"session busy ({managed.status})",
            )
        managed.status = op
        return managed.lock

    def session_info(managed: _Managed) -> dict:
        s = managed.session
        return {
            "id": s.id,
            "raster": {
                "path": s.raster_path,
                "width": s.raster.width,
                "height": s.raster.height,
                "bands": s.raster.bands,
                "crs": s.raster.crs.to_dict(),
                "geotransform": s.raster.geo.to_list(),
            },
            "palette": [
                {"id": c.id, "name": c.name, "color": list(c.color),
                 "parent_id": c.parent_id}
                for c in s.palette
            ],
            "label_counts": {str(k): v for k, v in sorted(s.labels.counts().items())},
            "iterations": s.iterations,
            "has_model": s.model is not None,
            "has_class_map": s.class_map is not None,
            "feature_count": len(s.store),
            "status": managed.status,
        }

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        try:
            config = (workflow.PipelineConfig(**req.config)
                      if req.config else None)
            session = workflow.session_create(req.raster_path, req.palette,
                                              config)
        except (DeltaforgeError, OSError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        managed = _Managed(session)
        manager.sessions[session.id] = managed
        manager.persist(managed)
        return session_info(managed)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return session_info(manager.get(session_id))

    @app.get("/sessions/{session_id}/status")
    def get_status(session_id: str):
        managed = manager.get(session_id)
        return {"status": managed.status,
                "busy": managed.lock.locked()}

    @app.get("/sessions/{session_id}/preview.png")
    def preview(session_id: str, bands: Optional[str] = None,
                stretch: Optional[str] = None):
        managed = manager.get(session_id)
        try:
            band_ids = ([int(b) for b in bands.split(",")] if bands else None)
            pair = (tuple(float(v) for v in stretch.split(","))
                    if stretch else (2.0, 98.0))
            png = workflow.preview_png(managed.session, band_ids, pair)
        except DeltaforgeError as exc:
            raise _http_error(exc)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return Response(content=png, media_type="image/png")

    @app.get("/sessions/{session_id}/overlay.png")
    def overlay(session_id: str):
        managed = manager.get(session_id)
        try:
            png = workflow.overlay_png(managed.session)
        except DeltaforgeError as exc:
            raise _http_error(exc)
        return Response(content=png, media_type="image/png")

    @app.get("/sessions/{session_id}/labels")
    def get_labels(session_id: str):
        managed = manager.get(session_id)
        return managed.session.labels.to_dict()

    @app.post("/sessions/{session_id}/labels")
    def post_labels(session_id: str, req: LabelsRequest):
        managed = manager.get(session_id)
        lock = write_guard(managed, "labeling")
        try:
            samples = [(s["row"], s["col"], s["class"]) for s in req.samples]
            counts = workflow.add_labels(managed.session, samples)
            manager.persist(managed)
            return {"totals": {str(k): v for k, v in sorted(counts.items())}}
        except KeyError as exc:
            raise HTTPException(status_code=400,
                                detail=f"sample missing field {exc}")
        except DeltaforgeError as exc:
            raise _http_error(exc)
        finally:
            managed.status = "idle"
            lock.release()

    @app.post("/sessions/{session_id}/train")
    def train(session_id: str, req: TrainRequest):
        managed = manager.get(session_id)
        lock = write_guard(managed, "training")
        try:
            entry = workflow.run_train(managed.session, req.model)
            manager.persist(managed)
            return entry
        except DeltaforgeError as exc:
            raise _http_error(exc)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        finally:
            managed.status = "idle"
            lock.release()

    @app.post("/sessions/{session_id}/classify")
    def classify(session_id: str, req: Optional[ClassifyRequest] = None):
        managed = manager.get(session_id)
        lock = write_guard(managed, "classifying")
        try:
            workers = req.workers if req else 1
            class_map = workflow.run_classify(managed.session, workers=workers)
            manager.persist(managed)
            import numpy as np
            ids, counts = np.unique(class_map.classes, return_counts=True)
            return {"pixel_counts": {
                str(i): int(n) for i, n in zip(ids.tolist(), counts.tolist())
            }}
        except DeltaforgeError as exc:
            raise _http_error(exc)
        finally:
            managed.status = "idle"
            lock.release()

    @app.post("/sessions/{session_id}/vectorize")
    def vectorize(session_id: str, req: Optional[VectorizeRequest] = None):
        managed = manager.get(session_id)
        lock = write_guard(managed, "vectorizing")
        try:
            req = req or VectorizeRequest()
            result = workflow.run_vectorize(
                managed.session, epsilon=req.epsilon,
                skeleton=req.skeleton, min_pixels=req.min_pixels,
            )
            manager.persist(managed)
            return result
        except DeltaforgeError as exc:
            raise _http_error(exc)
        finally:
            managed.status = "idle"
            lock.release()

    @app.get("/sessions/{session_id}/features")
    def features(session_id: str, bbox: Optional[str] = None,
                 class_id: Optional[str] = QueryParam(None, alias="class"),
                 stage: Optional[str] = None,
                 kind: Optional[str] = None):
        managed = manager.get(session_id)
        try:
            q = Query(
                class_ids=({int(v) for v in class_id.split(",")}
                           if class_id else None),
                bbox=(tuple(float(v) for v in bbox.split(","))
                      if bbox else None),
                stages=set(stage.split(",")) if stage else None,
                kinds=set(kind.split(",")) if kind else None,
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"features": [f.to_dict() for f in managed.session.store.query(q)]}

    @app.patch("/sessions/{session_id}/features/{feature_id}")
    def patch_feature(session_id: str, feature_id: str,
                      req: PatchFeatureRequest):
        managed = manager.get(session_id)
        lock = write_guard(managed, "editing")
        try:
            store = managed.session.store
            if req.geometry is not None:
                version = store.update_geometry(feature_id, req.geometry,
                                                req.stage)
            elif req.stage is not None:
                version = store.set_stage(feature_id, req.stage)
            else:
                raise HTTPException(status_code=400,
                                    detail="nothing to patch")
            manager.persist(managed)
            return store.get(feature_id).to_dict() | {"version": version}
        except (RejectedGeometry, IllegalTransition) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except NotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        finally:
            managed.status = "idle"
            lock.release()

    @app.post("/sessions/{session_id}/export")
    def export(session_id: str, req: ExportRequest):
        managed = manager.get(session_id)
        lock = write_guard(managed, "exporting")
        try:
            suffix = {"osm": ".osm", "geojson": ".geojson",
                      "snapshot": ".jsonl"}.get(req.format)
            if suffix is None:
                raise HTTPException(status_code=400,
                                    detail=f"unknown format {req.format!r}")
            out = manager.dir_for(managed.session.id) / f"export{suffix}"
            import warnings as _warnings
            with _warnings.catch_warnings():
                _warnings.simplefilter("ignore")
                workflow.export(managed.session, req.format, out,
                                include_unvalidated=req.include_unvalidated)
            media = {"osm": "application/xml",
                     "geojson": "application/geo+json",
                     "snapshot": "application/x-ndjson"}[req.format]
            return Response(
                content=out.read_bytes(), media_type=media,
                headers={"Content-Disposition":
                         f'attachment; filename="export{suffix}"'},
            )
        except DeltaforgeError as exc:
            raise _http_error(exc)
        finally:
            managed.status = "idle"
            lock.release()

    return app

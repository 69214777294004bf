"""Command-line interface over workflow sessions."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import workflow
from .errors import DeltaforgeError
from .raster import write_gridpack
from .synthetic import PALETTE, generate_delta


@click.group()
@click.option("--session", "session_dir", type=click.Path(), default="session",
              show_default=True, help="Session directory.")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Pipeline config JSON.")
@click.pass_context
def main(ctx, session_dir, config_path):
    """Raster-to-OSM natural feature extraction pipeline."""
    ctx.ensure_object(dict)
    ctx.obj["session_dir"] = Path(session_dir)
    ctx.obj["config"] = (
        workflow.PipelineConfig.from_file(config_path) if config_path else None
    )


def _load(ctx) -> workflow.Session:
    return workflow.session_load(ctx.obj["session_dir"])


def _save(ctx, session) -> None:
    workflow.session_save(session, ctx.obj["session_dir"])


def _run(fn):
    try:
        return fn()
    except DeltaforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@main.command()
@click.option("--raster", required=True, type=click.Path(exists=True))
@click.option("--palette", required=True, type=click.Path(exists=True))
@click.pass_context
def create(ctx, raster, palette):
    """Create a new session for a raster and class palette."""
    def go():
        session = workflow.session_create(raster, palette, ctx.obj["config"])
        _save(ctx, session)
        click.echo(f"created session {session.id} in {ctx.obj['session_dir']}")
    _run(go)


@main.command()
@click.option("--file", "label_file", required=True, type=click.Path(exists=True),
              help="JSON: {samples:[{row,col,class}]} or a bare sample list.")
@click.pass_context
def label(ctx, label_file):
    """Add training labels from a file."""
    def go():
        session = _load(ctx)
        payload = json.loads(Path(label_file).read_text())
        samples = payload["samples"] if isinstance(payload, dict) else payload
        counts = workflow.add_labels(
            session, [(s["row"], s["col"], s["class"]) for s in samples]
        )
        _save(ctx, session)
        click.echo(json.dumps({"totals": counts}))
    _run(go)


@main.command()
@click.option("--model", "model_kind", type=click.Choice(["svm", "knn"]),
              default="svm", show_default=True)
@click.option("--c", "svm_c", type=float, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--k", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def train(ctx, model_kind, svm_c, gamma, k, seed):
    """Train a classifier on the current labels."""
    def go():
        session = _load(ctx)
        if svm_c is not None:
            session.config.svm_c = svm_c
        if gamma is not None:
            session.config.svm_gamma = gamma
        if k is not None:
            session.config.knn_k = k
        if seed is not None:
            session.config.seed = seed
        entry = workflow.run_train(session, model_kind)
        _save(ctx, session)
        click.echo(json.dumps(entry))
    _run(go)


@main.command()
@click.option("--workers", type=int, default=1, show_default=True)
@click.pass_context
def classify(ctx, workers):
    """Predict the class of every pixel."""
    def go():
        session = _load(ctx)
        class_map = workflow.run_classify(session, workers=workers)
        _save(ctx, session)
        counts = {}
        import numpy as np
        ids, n = np.unique(class_map.classes, return_counts=True)
        for i, c in zip(ids.tolist(), n.tolist()):
            counts[str(i)] = c
        click.echo(json.dumps({"pixel_counts": counts}))
    _run(go)


@main.command()
@click.option("--epsilon", type=float, default=None)
@click.option("--skeleton", is_flag=True, default=False)
@click.option("--min-pixels", type=int, default=None)
@click.pass_context
def vectorize(ctx, epsilon, skeleton, min_pixels):
    """Group classified pixels into stored polygons (and skeletons)."""
    def go():
        session = _load(ctx)
        result = workflow.run_vectorize(session, epsilon=epsilon,
                                        skeleton=skeleton, min_pixels=min_pixels)
        _save(ctx, session)
        click.echo(json.dumps(result))
    _run(go)


@main.command()
@click.option("--file", "patch_file", required=True, type=click.Path(exists=True),
              help="JSON list of {id, geometry?, stage?}.")
@click.pass_context
def edit(ctx, patch_file):
    """Apply a geometry-patch file to stored features."""
    def go():
        session = _load(ctx)
        patches = json.loads(Path(patch_file).read_text())
        results = []
        for p in patches:
            if "geometry" in p:
                v = session.store.update_geometry(p["id"], p["geometry"],
                                                  p.get("stage"))
            else:
                v = session.store.set_stage(p["id"], p["stage"])
            results.append({"id": p["id"], "version": v})
        _save(ctx, session)
        click.echo(json.dumps(results))
    _run(go)


@main.command()
@click.option("--id", "feature_id", required=True)
@click.pass_context
def validate(ctx, feature_id):
    """Mark a feature as validated."""
    def go():
        session = _load(ctx)
        version = workflow.validate_feature(session, feature_id)
        _save(ctx, session)
        click.echo(json.dumps({"id": feature_id, "version": version}))
    _run(go)


@main.command()
@click.option("--format", "fmt", required=True,
              type=click.Choice(["osm", "geojson", "snapshot"]))
@click.option("--out", required=True, type=click.Path())
@click.option("--include-unvalidated", is_flag=True, default=False)
@click.pass_context
def export(ctx, fmt, out, include_unvalidated):
    """Export curated features to OSM XML, GeoJSON or a store snapshot."""
    def go():
        session = _load(ctx)
        workflow.export(session, fmt, out,
                        include_unvalidated=include_unvalidated)
        click.echo(f"wrote {out}")
    _run(go)


@main.command()
@click.option("--port", type=int, default=8571, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.pass_context
def serve(ctx, port, host):
    """Run the labeling HTTP service over the session directory's parent."""
    import uvicorn
    from .server import create_app
    app = create_app(ctx.obj["session_dir"].parent)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--size", type=int, default=256, show_default=True)
@click.option("--seed", type=int, default=1234, show_default=True)
def synth(out, size, seed):
    """Generate the synthetic delta demo raster (gridpack + palette + truth)."""
    out = Path(out)
    raster, truth = generate_delta(size=size, seed=seed)
    write_gridpack(raster, out)
    (out / "palette.json").write_text(json.dumps(PALETTE, indent=2))
    import numpy as np
    np.save(out / "truth.npy", truth.classes)
    click.echo(f"wrote synthetic delta to {out}")


if __name__ == "__main__":
    main()

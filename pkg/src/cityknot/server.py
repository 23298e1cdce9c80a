"""HTTP service over one workspace: live spec editing with incremental
re-evaluation, and data endpoints byte-identical to the CLI exports.

State transitions are serialized by one lock; a rejected PUT (parse,
validation, or evaluation failure) leaves the previously accepted spec and
its evaluation untouched, so readers always see a consistent snapshot.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .engine import (
    BUNDLE_VERSION,
    Evaluation,
    canonical_bytes,
    evaluate_spec,
    knot_payload,
    layer_geometry_doc,
    plot_data_doc,
    scene_bundle_bytes,
)
from .grammar import SpecError, parse_spec, spec_to_json, validate_spec
from .knots import KnotEvalError, KnotTypeError, LevelUnavailable
from .layers import LayerError, Workspace


class EngineState:
    """The served snapshot: last accepted spec's evaluation plus a revision
    counter for optimistic concurrency on PUT."""

    def __init__(self, workspace: Workspace, geocoder=None):
        self.workspace = workspace
        self.geocoder = geocoder
        self.lock = threading.Lock()
        self.revision = 0
        self.evaluation: Evaluation | None = None


def _diag_json(diagnostics) -> list:
    return [d.to_json() for d in diagnostics]


def _error(status: int, message: str, diagnostics=None) -> JSONResponse:
    body = {"error": message}
    if diagnostics is not None:
        body["diagnostics"] = diagnostics
    return JSONResponse(body, status_code=status)


def _json_response(doc) -> Response:
    return Response(content=canonical_bytes(doc),
                    media_type="application/json")


def create_app(workspace: Workspace, initial_spec=None,
               geocoder=None) -> FastAPI:
    state = EngineState(workspace, geocoder=geocoder)
    if initial_spec is not None:
        state.evaluation = evaluate_spec(initial_spec, workspace,
                                         geocoder=geocoder)
        state.revision = 1

    app = FastAPI(title="cityknot", version=BUNDLE_VERSION)
    app.state.engine = state

    def _ready():
        if state.evaluation is None:
            return None
        return state.evaluation

    @app.get("/api/spec")
    def get_spec():
        with state.lock:
            ev = _ready()
            if ev is None:
                return _error(404, "no specification accepted yet")
            return _json_response({
                "bundle_version": BUNDLE_VERSION,
                "revision": state.revision,
                "spec": spec_to_json(ev.spec),
            })

    @app.put("/api/spec")
    async def put_spec(request: Request):
        try:
            body = await request.json()
        except ValueError:
            return _error(422, "request body is not JSON")
        if isinstance(body, dict) and "spec" in body:
            doc = body["spec"]
            base_revision = body.get("revision")
        else:
            doc = body
            base_revision = None
        with state.lock:
            if base_revision is not None and base_revision != state.revision:
                return JSONResponse(
                    {"error": "revision conflict",
                     "revision": state.revision},
                    status_code=409)
            try:
                spec = parse_spec(doc)
            except SpecError as exc:
                return _error(422, "specification has errors",
                              _diag_json(exc.diagnostics))
            diagnostics = validate_spec(
                spec, state.workspace.catalog(refresh=True))
            if any(d.severity == "error" for d in diagnostics):
                return _error(422, "specification has errors",
                              _diag_json(diagnostics))
            try:
                evaluation = evaluate_spec(spec, state.workspace,
                                           previous=state.evaluation,
                                           geocoder=state.geocoder)
            except (KnotEvalError, KnotTypeError, LayerError) as exc:
                return _error(422, "evaluation failed", [{
                    "severity": "error", "path": "/knots",
                    "message": str(exc),
                }])
            state.evaluation = evaluation
            state.revision += 1
            return _json_response({
                "bundle_version": BUNDLE_VERSION,
                "revision": state.revision,
                "status": "ready",
                "diagnostics": _diag_json(diagnostics),
                "reevaluated": list(evaluation.reevaluated),
                "warnings": list(evaluation.warnings),
            })

    @app.get("/api/knots")
    def get_knots():
        with state.lock:
            ev = _ready()
            if ev is None:
                return _error(404, "no specification accepted yet")
            return _json_response({
                "bundle_version": BUNDLE_VERSION,
                "revision": state.revision,
                "knots": [
                    {"name": name,
                     "physical_layer": knot.physical_layer,
                     "level": knot.level,
                     "hash": ev.hashes[name]}
                    for name, knot in ev.knots.items()
                ],
            })

    @app.get("/api/knots/{name}/data")
    def get_knot_data(name: str, level: str | None = None,
                      format: str = "json"):
        with state.lock:
            ev = _ready()
            if ev is None:
                return _error(404, "no specification accepted yet")
            if format not in ("json", "csv"):
                return _error(422, f"unknown format {format!r}")
            if level not in (None, "objects", "coordinates"):
                return _error(422, f"unknown level {level!r}")
            try:
                payload = knot_payload(ev, state.workspace, name,
                                       level=level, fmt=format)
            except KeyError:
                return _error(404, f"unknown knot {name!r}")
            except LevelUnavailable as exc:
                return _error(422, str(exc))
            media = ("text/csv; charset=utf-8" if format == "csv"
                     else "application/json")
            return Response(content=payload, media_type=media)

    @app.get("/api/layers/{name}/geometry")
    def get_layer_geometry(name: str):
        with state.lock:
            try:
                doc = layer_geometry_doc(state.workspace, name)
            except LayerError as exc:
                return _error(404, str(exc))
            return _json_response(doc)

    @app.get("/api/plots/{index}/data")
    def get_plot_data(index: int):
        with state.lock:
            ev = _ready()
            if ev is None:
                return _error(404, "no specification accepted yet")
            try:
                doc = plot_data_doc(ev, state.workspace, index)
            except IndexError as exc:
                return _error(404, str(exc))
            except (KnotEvalError, KnotTypeError) as exc:
                return _error(422, str(exc))
            return _json_response(doc)

    @app.get("/api/scene")
    def get_scene():
        with state.lock:
            ev = _ready()
            if ev is None:
                return _error(404, "no specification accepted yet")
            return Response(
                content=scene_bundle_bytes(ev, state.workspace),
                media_type="application/json")

    return app

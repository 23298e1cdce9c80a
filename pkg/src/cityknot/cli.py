"""Command line interface: validate, ingest, shadow, eval, export-scene,
serve.

Exit codes: 0 success, 1 diagnostics with errors, 2 I/O failure.  All
output is deterministic; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from datetime import datetime, timezone

from .engine import evaluate_spec, knot_payload, scene_bundle_bytes
from .grammar import SpecError, parse_spec, validate_spec
from .ingest import (
    IngestConfig,
    IngestError,
    ingest_csv,
    ingest_geojson,
    ingest_osm,
    make_grid,
    sample_surfaces,
)
from .knots import KnotEvalError
from .layers import LayerError, Workspace
from .shadow import EmptyScene, accumulate_shadow, build_bvh, scene_triangles
from .solar import EmptyPath, SolarRangeError, sun_path

_WORKSPACE_ENV = "UTK_WORKSPACE"


class CliError(Exception):
    """Failure with a chosen exit code."""

    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _fail_io(message: str) -> CliError:
    return CliError(message, 2)


def _fail_diag(message: str) -> CliError:
    return CliError(message, 1)


def _workspace(args) -> Workspace:
    root = getattr(args, "workspace", None) or os.environ.get(_WORKSPACE_ENV)
    if not root:
        raise _fail_io(
            f"no workspace: pass --workspace or set {_WORKSPACE_ENV}")
    if not os.path.isdir(root):
        raise _fail_io(f"workspace directory not found: {root}")
    return Workspace(root)


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise _fail_io(f"cannot read {path}: {exc}") from exc


def _read_json(path: str):
    text = _read_text(path)
    try:
        return json.loads(text)
    except ValueError as exc:
        raise _fail_diag(f"{path}: invalid JSON: {exc}") from exc


def _print_diagnostics(diagnostics) -> bool:
    """Emit diagnostics to stderr; True when any is an error."""
    failed = False
    for d in diagnostics:
        print(str(d), file=sys.stderr)
        failed = failed or d.severity == "error"
    return failed


def _load_spec(path: str, workspace: Workspace | None):
    """Parse and validate; raises CliError(1) on errors."""
    text = _read_text(path)
    try:
        spec = parse_spec(text)
    except SpecError as exc:
        _print_diagnostics(exc.diagnostics)
        raise _fail_diag(f"{path}: specification has errors") from exc
    catalog = workspace.catalog() if workspace is not None else None
    if _print_diagnostics(validate_spec(spec, catalog)):
        raise _fail_diag(f"{path}: specification has errors")
    return spec


def parse_instant(text: str) -> datetime:
    """ISO-8601 instant; trailing Z or explicit offset; naive means UTC."""
    t = text.strip()
    if t.endswith(("Z", "z")):
        t = t[:-1] + "+00:00"
    try:
        when = datetime.fromisoformat(t)
    except ValueError as exc:
        raise _fail_diag(f"invalid instant {text!r}: {exc}") from exc
    if when.tzinfo is None:
        when = when.replace(tzinfo=timezone.utc)
    return when


def parse_step_minutes(text: str) -> float:
    """Step duration: bare minutes, or a number with s/m/h suffix."""
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*([smh]?)\s*", text)
    if not m:
        raise _fail_diag(f"invalid step {text!r}: use forms like 10m, 1h, 90s")
    scale = {"s": 1.0 / 60.0, "m": 1.0, "h": 60.0, "": 1.0}[m.group(2)]
    minutes = float(m.group(1)) * scale
    if minutes <= 0:
        raise _fail_diag("step must be positive")
    return minutes


def _parse_bbox(text: str) -> tuple:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if len(parts) != 4:
        raise _fail_diag(
            f"invalid bbox {text!r}: need lat_min,lon_min,lat_max,lon_max")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise _fail_diag(f"invalid bbox {text!r}: {exc}") from exc


def _safe_filename(name: str) -> str:
    return name.replace(os.sep, "_").replace("/", "_")


# ---------------------------------------------------------------------------
# commands


def _cmd_validate(args) -> int:
    workspace = None
    if getattr(args, "workspace", None) or os.environ.get(_WORKSPACE_ENV):
        workspace = _workspace(args)
    _load_spec(args.spec, workspace)
    print(f"{args.spec}: ok")
    return 0


def _save_layers(workspace: Workspace, layers) -> None:
    for layer in layers:
        path = workspace.save(layer)
        if hasattr(layer, "objects"):
            summary = f"{layer.kind}, {len(layer.objects)} objects"
        else:
            summary = f"thematic, {len(layer)} points"
        print(f"saved {layer.name} ({summary}) -> {path}")


def _warn_printer(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _cmd_ingest(args) -> int:
    workspace = _workspace(args)
    try:
        if args.source == "geojson":
            doc = _read_json(args.infile)
            layer = ingest_geojson(doc, args.name, args.kind,
                                   origin=args.origin, warn=_warn_printer)
            _save_layers(workspace, [layer])
        elif args.source == "csv":
            columns = {}
            for logical, col in (("lat", args.lat_col), ("lon", args.lon_col),
                                 ("height", args.height_col),
                                 ("value", args.value_col)):
                if col:
                    columns[logical] = col
            if not os.path.exists(args.infile):
                raise _fail_io(f"cannot read {args.infile}: not found")
            layer = ingest_csv(args.infile, columns=columns or None,
                               name=args.name, warn=_warn_printer)
            _save_layers(workspace, [layer])
        elif args.source == "osm":
            if args.fetch:
                extract = _overpass_fetch(args.bbox)
            elif args.infile:
                extract = _read_json(args.infile)
            else:
                raise _fail_io("osm ingest needs --in FILE or --fetch")
            config = IngestConfig(region=list(_parse_bbox(args.bbox)),
                                  layers=tuple(args.layers.split(",")))
            frame = None
            if any(e.layer_type == "physical"
                   for e in workspace.catalog().values()):
                frame = workspace.require_frame()
            layers = ingest_osm(extract, config, frame=frame,
                                warn=_warn_printer)
            _save_layers(workspace, layers)
        else:  # grid
            layer = make_grid(_parse_bbox(args.bbox), cell=args.cell,
                              origin=args.origin, name=args.name)
            _save_layers(workspace, [layer])
    except IngestError as exc:
        raise _fail_diag(f"ingest failed: {exc}") from exc
    except LayerError as exc:
        raise _fail_diag(f"ingest failed: {exc}") from exc
    return 0


def _overpass_fetch(bbox_text: str) -> dict:
    """Live Overpass query over the bbox; network use is opt-in (--fetch)."""
    from urllib import error, request
    lat0, lon0, lat1, lon1 = _parse_bbox(bbox_text)
    query = (
        "[out:json][timeout:60];"
        f"(way[building]({lat0},{lon0},{lat1},{lon1});"
        f"way[leisure=park]({lat0},{lon0},{lat1},{lon1});"
        f"way[natural=water]({lat0},{lon0},{lat1},{lon1});"
        f"way[highway]({lat0},{lon0},{lat1},{lon1}););"
        "out body;>;out skel qt;"
    )
    url = "https://overpass-api.de/api/interpreter"
    try:
        with request.urlopen(request.Request(
                url, data=query.encode("utf-8")), timeout=120) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except (error.URLError, OSError, ValueError) as exc:
        raise _fail_io(f"overpass fetch failed: {exc}") from exc


def _cmd_shadow(args) -> int:
    workspace = _workspace(args)
    step = parse_step_minutes(args.step)
    start = parse_instant(args.window_from)
    end = parse_instant(args.window_to)
    try:
        layer = workspace.load(args.layer)
    except LayerError as exc:
        raise _fail_diag(str(exc)) from exc
    scene_names = [args.layer] + list(args.occluder or [])
    try:
        occluders = [workspace.load(n) for n in scene_names]
        triangles = scene_triangles(occluders)
        samples = sample_surfaces(layer, max_edge=args.max_edge)
        path = sun_path(args.lat, args.lon, start, end, step_minutes=step)
        result = accumulate_shadow(samples, build_bvh(triangles), path,
                                   name=args.out or f"{args.layer}_shadow")
    except (LayerError, IngestError, EmptyScene, EmptyPath, SolarRangeError,
            ValueError) as exc:
        raise _fail_diag(f"shadow failed: {exc}") from exc
    saved = workspace.save(result)
    minutes = result.annotations.get("accumulation_minutes")
    print(f"saved {result.name} ({len(result)} samples, "
          f"accumulation_minutes={minutes:g}) -> {saved}")
    return 0


def _evaluate(args, workspace: Workspace):
    spec = _load_spec(args.spec, workspace)
    try:
        return evaluate_spec(spec, workspace)
    except (KnotEvalError, LayerError, TypeError) as exc:
        raise _fail_diag(f"evaluation failed: {exc}") from exc


def _cmd_eval(args) -> int:
    workspace = _workspace(args)
    evaluation = _evaluate(args, workspace)
    for w in evaluation.warnings:
        print(f"warning: {w}", file=sys.stderr)
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        raise _fail_io(f"cannot create {args.out}: {exc}") from exc
    suffix = "csv" if args.format == "csv" else "json"
    for name in evaluation.spec.knot_names():
        payload = knot_payload(evaluation, workspace, name, fmt=args.format)
        path = os.path.join(args.out, f"{_safe_filename(name)}.{suffix}")
        try:
            with open(path, "wb") as fh:
                fh.write(payload)
        except OSError as exc:
            raise _fail_io(f"cannot write {path}: {exc}") from exc
        print(f"wrote {name} -> {path}")
    return 0


def _cmd_export_scene(args) -> int:
    workspace = _workspace(args)
    evaluation = _evaluate(args, workspace)
    payload = scene_bundle_bytes(evaluation, workspace)
    try:
        with open(args.out, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise _fail_io(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote scene bundle ({len(payload)} bytes) -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app
    workspace = _workspace(args)
    initial = None
    if args.spec:
        initial = _load_spec(args.spec, workspace)
    app = create_app(workspace, initial_spec=initial)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_workspace(parser):
    parser.add_argument("--workspace", default=None,
                        help=f"workspace directory (default ${_WORKSPACE_ENV})")


def _origin_arg(text: str):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("origin needs lat,lon")
    return (float(parts[0]), float(parts[1]))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cityknot",
        description="Grammar-driven urban analytics over a layer workspace")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a specification")
    p.add_argument("spec")
    _add_workspace(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("ingest", help="convert sources into workspace layers")
    ing = p.add_subparsers(dest="source", required=True)

    g = ing.add_parser("geojson")
    g.add_argument("--in", dest="infile", required=True)
    g.add_argument("--name", required=True)
    g.add_argument("--kind", choices=("polygons2d", "lines"), required=True)
    g.add_argument("--origin", type=_origin_arg, default=None,
                   help="frame anchor lat,lon (default: feature centroid)")
    _add_workspace(g)
    g.set_defaults(func=_cmd_ingest)

    c = ing.add_parser("csv")
    c.add_argument("--in", dest="infile", required=True)
    c.add_argument("--name", default=None)
    c.add_argument("--lat-col", default=None)
    c.add_argument("--lon-col", default=None)
    c.add_argument("--height-col", default=None)
    c.add_argument("--value-col", default=None)
    _add_workspace(c)
    c.set_defaults(func=_cmd_ingest)

    o = ing.add_parser("osm")
    o.add_argument("--in", dest="infile", default=None,
                   help="Overpass JSON extract (omit with --fetch)")
    o.add_argument("--bbox", required=True,
                   help="lat_min,lon_min,lat_max,lon_max")
    o.add_argument("--layers", default="buildings,parks,water,roads")
    o.add_argument("--fetch", action="store_true",
                   help="query Overpass live instead of reading --in")
    _add_workspace(o)
    o.set_defaults(func=_cmd_ingest)

    r = ing.add_parser("grid")
    r.add_argument("--bbox", required=True)
    r.add_argument("--cell", type=float, required=True)
    r.add_argument("--name", default="grid")
    r.add_argument("--origin", type=_origin_arg, default=None)
    _add_workspace(r)
    r.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("shadow", help="accumulate shadow over a sun window")
    p.add_argument("--layer", required=True, help="mesh3d layer to sample")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--from", dest="window_from", required=True,
                   help="window start, e.g. 2021-12-21T08:00Z")
    p.add_argument("--to", dest="window_to", required=True,
                   help="window end (exclusive)")
    p.add_argument("--step", default="10m")
    p.add_argument("--occluder", action="append", default=[],
                   help="additional scene layer (repeatable)")
    p.add_argument("--max-edge", type=float, default=2.0,
                   help="sampling density: max triangle edge in meters")
    p.add_argument("--out", default=None,
                   help="result layer name (default LAYER_shadow)")
    _add_workspace(p)
    p.set_defaults(func=_cmd_shadow)

    p = sub.add_parser("eval", help="evaluate all knots and export them")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    _add_workspace(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export-scene", help="write a self-contained bundle")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True, help="output file")
    _add_workspace(p)
    p.set_defaults(func=_cmd_export_scene)

    p = sub.add_parser("serve", help="serve the live-authoring HTTP API")
    p.add_argument("--spec", default=None, help="initial specification")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    _add_workspace(p)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Declarative scene grammar: parse, validate, canonicalize, serialize.

A specification is a UTF-8 JSON document with a required grammar_version and
three sections: views (each a map plus optional plots), cameras, and knots.
Knots come in two forms: join knots carry a chain of integration schemes
over layers and knots; operation knots carry an expression over previously
declared input knots that share one physical layer.  A single scheme whose
operation is an expression (not an aggregation keyword) is the inline form
of an operation knot.

Parsing materializes defaults, so serialize always emits the canonical,
fully explicit form; parse(serialize(parse(t))) equals parse(t).
Diagnostics address document locations with JSON-pointer style paths.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from . import exprlang

GRAMMAR_VERSIONS = ("1.0",)

SPATIAL_RELATIONS = ("nearest", "contains", "within", "intersects", "direct",
                     "inner_aggregate")
AGGREGATIONS = ("min", "max", "sum", "mean", "count")
INTERACTIONS = ("brush", "pick", "none")
ARRANGEMENTS = ("linked", "embedded_surface", "embedded_footprint")
OUT_LEVELS = ("coordinates", "objects")

# Relations that are one-to-many by construction at their legal out level;
# the rest are checked dynamically during evaluation.
STATIC_ONE_TO_MANY = ("contains", "intersects", "inner_aggregate")

_DEFAULT_OUT_LEVEL = {
    "nearest": "coordinates",
    "direct": "coordinates",
    "contains": "objects",
    "within": "objects",
    "intersects": "objects",
    "inner_aggregate": "objects",
}


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    path: str
    message: str
    code: str | None = None

    def to_json(self) -> dict:
        doc = {"severity": self.severity, "path": self.path, "message": self.message}
        if self.code:
            doc["code"] = self.code
        return doc

    def __str__(self) -> str:
        tag = f" [{self.code}]" if self.code else ""
        return f"{self.severity}{tag} {self.path}: {self.message}"


class SpecError(ValueError):
    """Malformed specification; carries the collected diagnostics."""

    def __init__(self, diagnostics: list):
        self.diagnostics = diagnostics
        head = "; ".join(str(d) for d in diagnostics[:3])
        more = f" (+{len(diagnostics) - 3} more)" if len(diagnostics) > 3 else ""
        super().__init__(head + more)


@dataclass(frozen=True)
class CameraDef:
    camera_id: str
    position: tuple  # (x, y, z) workspace-local meters
    direction: tuple  # unit view direction


@dataclass(frozen=True)
class KnotBinding:
    knot_id: str
    interaction: str = "none"


@dataclass(frozen=True)
class MapDef:
    camera_id: str
    bindings: tuple


@dataclass(frozen=True)
class PlotBinding:
    knot_id: str
    arrangement: str


@dataclass(frozen=True)
class PlotDef:
    chart_spec: dict
    bindings: tuple
    interaction: str = "none"
    args: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, PlotDef):
            return NotImplemented
        return (self.chart_spec == other.chart_spec and self.bindings == other.bindings
                and self.interaction == other.interaction and self.args == other.args)

    def __hash__(self):
        return hash((json.dumps(self.chart_spec, sort_keys=True), self.bindings,
                     self.interaction, json.dumps(self.args, sort_keys=True)))


@dataclass(frozen=True)
class ViewDef:
    map: MapDef
    plots: tuple = ()


@dataclass(frozen=True)
class FilterDef:
    kind: str  # "bounding_box" | "address"
    bbox: tuple | None = None  # (lat_min, lon_min, lat_max, lon_max)
    address: str | None = None


@dataclass(frozen=True)
class SchemeDef:
    in_ref: str
    out_ref: str
    relation: str | None
    out_level: str | None
    operation: str | None


@dataclass(frozen=True)
class KnotDef:
    name: str
    schemes: tuple = ()
    operation_expr: str | None = None
    inputs: tuple = ()
    aliases: tuple = ()  # ordered (alias, knot_name) pairs
    filter: FilterDef | None = None

    @property
    def is_operation(self) -> bool:
        return self.operation_expr is not None

    def alias_map(self) -> dict:
        env = {name: name for name in self.inputs}
        env.update({a: k for a, k in self.aliases})
        return env


@dataclass(frozen=True)
class Specification:
    grammar_version: str
    views: tuple
    cameras: tuple
    knots: tuple

    def knot(self, name: str) -> KnotDef:
        for k in self.knots:
            if k.name == name:
                return k
        raise KeyError(name)

    def knot_names(self) -> list:
        return [k.name for k in self.knots]


# ---------------------------------------------------------------------------
# parse


class _Ctx:
    def __init__(self):
        self.diagnostics: list[Diagnostic] = []

    def error(self, path: str, message: str, code: str | None = None):
        self.diagnostics.append(Diagnostic("error", path, message, code))

    def fail(self):
        raise SpecError(self.diagnostics)

    def check(self):
        if self.diagnostics:
            self.fail()


def _need_obj(ctx, data, path, allowed: tuple, required: tuple) -> bool:
    if not isinstance(data, dict):
        ctx.error(path, f"expected an object, got {type(data).__name__}", "wrong-type")
        return False
    ok = True
    for key in data:
        if key not in allowed:
            ctx.error(f"{path}/{key}", f"unknown field {key!r}", "unknown-field")
            ok = False
    for key in required:
        if key not in data:
            ctx.error(path, f"missing required field {key!r}", "missing-field")
            ok = False
    return ok


def _need_str(ctx, value, path) -> str | None:
    if not isinstance(value, str) or not value:
        ctx.error(path, "expected a non-empty string", "wrong-type")
        return None
    return value


def _need_vec3(ctx, value, path):
    if (not isinstance(value, list) or len(value) != 3
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       and math.isfinite(v) for v in value)):
        ctx.error(path, "expected a list of 3 finite numbers", "wrong-type")
        return None
    return tuple(float(v) for v in value)


def _need_enum(ctx, value, path, options: tuple, default=None):
    if value is None and default is not None:
        return default
    if value not in options:
        ctx.error(path, f"expected one of {', '.join(options)}", "bad-enum")
        return None
    return value


def _parse_filter(ctx, data, path) -> FilterDef | None:
    if not _need_obj(ctx, data, path, ("bounding_box", "address"), ()):
        return None
    if ("bounding_box" in data) == ("address" in data):
        ctx.error(path, "filter takes exactly one of bounding_box or address",
                  "bad-filter")
        return None
    if "address" in data:
        addr = _need_str(ctx, data["address"], f"{path}/address")
        return FilterDef("address", address=addr) if addr else None
    box = data["bounding_box"]
    if (not isinstance(box, list) or len(box) != 4
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       and math.isfinite(v) for v in box)):
        ctx.error(f"{path}/bounding_box", "expected [lat_min, lon_min, lat_max, lon_max]",
                  "wrong-type")
        return None
    box = tuple(float(v) for v in box)
    if box[0] >= box[2] or box[1] >= box[3]:
        ctx.error(f"{path}/bounding_box", "bounding box min must be below max",
                  "bad-bbox")
        return None
    return FilterDef("bounding_box", bbox=box)


def _parse_scheme(ctx, data, path) -> SchemeDef | None:
    allowed = ("in", "out", "spatial_relation", "out_level", "operation")
    if not _need_obj(ctx, data, path, allowed, ("in", "out")):
        return None
    in_ref = _need_str(ctx, data.get("in"), f"{path}/in")
    out_ref = _need_str(ctx, data.get("out"), f"{path}/out")
    relation = None
    if "spatial_relation" in data:
        relation = _need_enum(ctx, data["spatial_relation"],
                              f"{path}/spatial_relation", SPATIAL_RELATIONS)
    out_level = None
    if "out_level" in data:
        out_level = _need_enum(ctx, data["out_level"], f"{path}/out_level", OUT_LEVELS)
    elif relation is not None:
        out_level = _DEFAULT_OUT_LEVEL[relation]
    operation = None
    if "operation" in data:
        operation = _need_str(ctx, data["operation"], f"{path}/operation")
    if in_ref is None or out_ref is None:
        return None
    return SchemeDef(in_ref, out_ref, relation, out_level, operation)


def _parse_knot(ctx, data, path) -> KnotDef | None:
    allowed = ("name", "integration_scheme", "inputs", "aliases", "operation", "filter")
    if not _need_obj(ctx, data, path, allowed, ("name",)):
        return None
    name = _need_str(ctx, data.get("name"), f"{path}/name")
    if name is None:
        return None

    aliases: tuple = ()
    if "aliases" in data:
        raw = data["aliases"]
        if not isinstance(raw, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in raw.items()):
            ctx.error(f"{path}/aliases", "expected an object of alias -> knot name",
                      "wrong-type")
        else:
            aliases = tuple(sorted(raw.items()))

    filt = None
    if "filter" in data:
        filt = _parse_filter(ctx, data["filter"], f"{path}/filter")

    has_schemes = "integration_scheme" in data
    has_inputs = "inputs" in data or "operation" in data
    if has_schemes and has_inputs:
        ctx.error(path, "a knot is either integration schemes or inputs+operation",
                  "bad-knot-form", )
        return None

    if has_inputs:
        inputs_raw = data.get("inputs")
        if (not isinstance(inputs_raw, list) or not inputs_raw
                or not all(isinstance(v, str) and v for v in inputs_raw)):
            ctx.error(f"{path}/inputs", "expected a non-empty list of knot names",
                      "wrong-type")
            return None
        expr = _need_str(ctx, data.get("operation"), f"{path}/operation")
        if expr is None:
            return None
        return KnotDef(name=name, operation_expr=expr, inputs=tuple(inputs_raw),
                       aliases=aliases, filter=filt)

    schemes_raw = data.get("integration_scheme")
    if not isinstance(schemes_raw, list) or not schemes_raw:
        ctx.error(f"{path}/integration_scheme",
                  "expected a non-empty list of integration schemes", "wrong-type")
        return None
    schemes = []
    for i, raw in enumerate(schemes_raw):
        s = _parse_scheme(ctx, raw, f"{path}/integration_scheme/{i}")
        if s is not None:
            schemes.append(s)
    if len(schemes) != len(schemes_raw):
        return None

    # A lone scheme whose operation is an expression is an operation knot
    # over (in, out); multi-scheme chains take aggregation keywords only
    # (enforced by validate).
    if (len(schemes) == 1 and schemes[0].operation is not None
            and schemes[0].operation not in AGGREGATIONS):
        s = schemes[0]
        return KnotDef(name=name, schemes=tuple(schemes), operation_expr=s.operation,
                       inputs=(s.in_ref, s.out_ref), aliases=aliases, filter=filt)
    return KnotDef(name=name, schemes=tuple(schemes), aliases=aliases, filter=filt)


def parse_spec(source) -> Specification:
    """Parse a JSON text or already-decoded document into a Specification.

    Raises SpecError carrying path-addressed diagnostics on any malformation;
    unknown fields and unknown enum members are rejected, defaults are
    materialized, camera directions are normalized.
    """
    ctx = _Ctx()
    if isinstance(source, (str, bytes)):
        try:
            data = json.loads(source)
        except json.JSONDecodeError as exc:
            ctx.error("", f"invalid JSON: {exc}", "invalid-json")
            ctx.fail()
    else:
        data = source

    if not _need_obj(ctx, data, "", ("grammar_version", "views", "cameras", "knots"),
                     ("grammar_version", "views", "cameras")):
        ctx.fail()

    version = data.get("grammar_version")
    if version not in GRAMMAR_VERSIONS:
        ctx.error("/grammar_version",
                  f"unknown grammar version {version!r}; supported: "
                  f"{', '.join(GRAMMAR_VERSIONS)}", "bad-version")

    cameras = []
    raw_cameras = data.get("cameras")
    if not isinstance(raw_cameras, list):
        ctx.error("/cameras", "expected a list", "wrong-type")
    else:
        for i, raw in enumerate(raw_cameras):
            path = f"/cameras/{i}"
            if not _need_obj(ctx, raw, path, ("id", "position", "direction"),
                             ("id", "position", "direction")):
                continue
            cam_id = _need_str(ctx, raw.get("id"), f"{path}/id")
            pos = _need_vec3(ctx, raw.get("position"), f"{path}/position")
            direction = _need_vec3(ctx, raw.get("direction"), f"{path}/direction")
            if cam_id is None or pos is None or direction is None:
                continue
            norm = math.sqrt(sum(v * v for v in direction))
            if norm < 1e-12:
                ctx.error(f"{path}/direction", "direction must be non-zero",
                          "zero-direction")
                continue
            if abs(norm - 1.0) > 1e-12:
                direction = tuple(v / norm for v in direction)
            cameras.append(CameraDef(cam_id, pos, direction))

    knots = []
    raw_knots = data.get("knots", [])
    if not isinstance(raw_knots, list):
        ctx.error("/knots", "expected a list", "wrong-type")
    else:
        for i, raw in enumerate(raw_knots):
            k = _parse_knot(ctx, raw, f"/knots/{i}")
            if k is not None:
                knots.append(k)

    views = []
    raw_views = data.get("views")
    if not isinstance(raw_views, list):
        ctx.error("/views", "expected a list", "wrong-type")
    else:
        for i, raw in enumerate(raw_views):
            path = f"/views/{i}"
            if not _need_obj(ctx, raw, path, ("map", "plots"), ("map",)):
                continue
            mpath = f"{path}/map"
            m = raw.get("map")
            if not _need_obj(ctx, m, mpath, ("camera", "knots"), ("camera", "knots")):
                continue
            cam = _need_str(ctx, m.get("camera"), f"{mpath}/camera")
            bindings = []
            raw_bind = m.get("knots")
            if not isinstance(raw_bind, list) or not raw_bind:
                ctx.error(f"{mpath}/knots", "expected a non-empty list of knot bindings",
                          "wrong-type")
                raw_bind = []
            for j, rb in enumerate(raw_bind):
                bpath = f"{mpath}/knots/{j}"
                if not _need_obj(ctx, rb, bpath, ("knot", "interaction"), ("knot",)):
                    continue
                kn = _need_str(ctx, rb.get("knot"), f"{bpath}/knot")
                inter = _need_enum(ctx, rb.get("interaction"), f"{bpath}/interaction",
                                   INTERACTIONS, default="none")
                if kn and inter:
                    bindings.append(KnotBinding(kn, inter))
            plots = []
            for j, rp in enumerate(raw.get("plots", []) or []):
                ppath = f"{path}/plots/{j}"
                if not _need_obj(ctx, rp, ppath, ("chart", "knots", "interaction", "args"),
                                 ("chart", "knots")):
                    continue
                chart = rp.get("chart")
                if not isinstance(chart, dict):
                    ctx.error(f"{ppath}/chart", "expected a chart object", "wrong-type")
                    continue
                pbindings = []
                raw_pb = rp.get("knots")
                if not isinstance(raw_pb, list) or not raw_pb:
                    ctx.error(f"{ppath}/knots", "expected a non-empty list", "wrong-type")
                    raw_pb = []
                for q, rb in enumerate(raw_pb):
                    bpath = f"{ppath}/knots/{q}"
                    if not _need_obj(ctx, rb, bpath, ("knot", "arrangement"),
                                     ("knot", "arrangement")):
                        continue
                    kn = _need_str(ctx, rb.get("knot"), f"{bpath}/knot")
                    arr = _need_enum(ctx, rb.get("arrangement"), f"{bpath}/arrangement",
                                     ARRANGEMENTS)
                    if kn and arr:
                        pbindings.append(PlotBinding(kn, arr))
                inter = _need_enum(ctx, rp.get("interaction"), f"{ppath}/interaction",
                                   INTERACTIONS, default="none")
                args = rp.get("args", {})
                if not isinstance(args, dict):
                    ctx.error(f"{ppath}/args", "expected an object", "wrong-type")
                    args = {}
                if pbindings and inter:
                    plots.append(PlotDef(chart, tuple(pbindings), inter, args))
            if cam and bindings:
                views.append(ViewDef(MapDef(cam, tuple(bindings)), tuple(plots)))

    ctx.check()
    return Specification(
        grammar_version=version,
        views=tuple(views),
        cameras=tuple(cameras),
        knots=tuple(knots),
    )


def canonicalize(spec: Specification) -> Specification:
    """Idempotent normalization: unit camera directions, explicit defaults.

    parse_spec already canonicalizes, so this is the identity for parsed
    specs; exposed for documents assembled programmatically.
    """
    cameras = []
    for cam in spec.cameras:
        norm = math.sqrt(sum(v * v for v in cam.direction))
        if norm > 1e-12 and abs(norm - 1.0) > 1e-12:
            cam = replace(cam, direction=tuple(v / norm for v in cam.direction))
        cameras.append(cam)
    knots = []
    for k in spec.knots:
        schemes = tuple(
            replace(s, out_level=s.out_level or
                    (_DEFAULT_OUT_LEVEL[s.relation] if s.relation else None))
            for s in k.schemes
        )
        knots.append(replace(k, schemes=schemes, aliases=tuple(sorted(k.aliases))))
    return replace(spec, cameras=tuple(cameras), knots=tuple(knots))


# ---------------------------------------------------------------------------
# serialize


def spec_to_json(spec: Specification) -> dict:
    def filter_doc(f: FilterDef) -> dict:
        if f.kind == "address":
            return {"address": f.address}
        return {"bounding_box": list(f.bbox)}

    def knot_doc(k: KnotDef) -> dict:
        doc: dict = {"name": k.name}
        if k.schemes:
            doc["integration_scheme"] = [
                {key: val for key, val in (
                    ("in", s.in_ref), ("out", s.out_ref),
                    ("spatial_relation", s.relation),
                    ("out_level", s.out_level), ("operation", s.operation),
                ) if val is not None}
                for s in k.schemes
            ]
        else:
            doc["inputs"] = list(k.inputs)
            doc["operation"] = k.operation_expr
        if k.aliases:
            doc["aliases"] = dict(k.aliases)
        if k.filter is not None:
            doc["filter"] = filter_doc(k.filter)
        return doc

    return {
        "grammar_version": spec.grammar_version,
        "views": [
            {
                "map": {
                    "camera": v.map.camera_id,
                    "knots": [
                        {"knot": b.knot_id, "interaction": b.interaction}
                        for b in v.map.bindings
                    ],
                },
                **({"plots": [
                    {
                        "chart": p.chart_spec,
                        "knots": [
                            {"knot": b.knot_id, "arrangement": b.arrangement}
                            for b in p.bindings
                        ],
                        "interaction": p.interaction,
                        "args": p.args,
                    }
                    for p in v.plots
                ]} if v.plots else {}),
            }
            for v in spec.views
        ],
        "cameras": [
            {"id": c.camera_id, "position": list(c.position),
             "direction": list(c.direction)}
            for c in spec.cameras
        ],
        "knots": [knot_doc(k) for k in spec.knots],
    }


def serialize(spec: Specification) -> str:
    """Canonical JSON text: fixed field order, two-space indent."""
    return json.dumps(spec_to_json(spec), ensure_ascii=False, indent=2) + "\n"


# ---------------------------------------------------------------------------
# validate


def _resolver(spec: Specification, catalog):
    """Static name resolution: declared knots in order, catalog layers."""
    declared: dict[str, int] = {}
    for i, k in enumerate(spec.knots):
        declared.setdefault(k.name, i)
    return declared


def resolve_final_layer(spec: Specification, knot: KnotDef,
                        _seen: frozenset = frozenset()) -> str | None:
    """The physical layer a knot's values land on, or None when it cannot be
    determined statically (broken references report separately)."""
    if knot.name in _seen:
        return None
    seen = _seen | {knot.name}
    names = {k.name: k for k in spec.knots}
    if knot.is_operation:
        ref = knot.inputs[0] if knot.inputs else None
        if ref in names:
            return resolve_final_layer(spec, names[ref], seen)
        return ref
    if not knot.schemes:
        return None
    out = knot.schemes[-1].out_ref
    if out in names:
        return resolve_final_layer(spec, names[out], seen)
    return out


def validate_spec(spec: Specification, catalog=None) -> list:
    """Reference, ordering, and semantic checks; returns diagnostics.

    catalog maps layer name -> CatalogEntry (layer_type, kind); without one,
    layer existence and kind checks are skipped and only structural rules
    run.  An error-free result means the spec is evaluable against a
    workspace with matching layers.
    """
    diags: list[Diagnostic] = []

    def error(path, message, code):
        diags.append(Diagnostic("error", path, message, code))

    def warning(path, message, code):
        diags.append(Diagnostic("warning", path, message, code))

    if not spec.views:
        error("/views", "at least one view is required", "empty-views")
    if not spec.cameras:
        error("/cameras", "at least one camera is required", "empty-cameras")

    camera_ids: dict[str, int] = {}
    for i, cam in enumerate(spec.cameras):
        if cam.camera_id in camera_ids:
            error(f"/cameras/{i}/id", f"duplicate camera id {cam.camera_id!r}",
                  "duplicate-camera")
        camera_ids.setdefault(cam.camera_id, i)

    knot_order: dict[str, int] = {}
    for i, k in enumerate(spec.knots):
        if k.name in knot_order:
            error(f"/knots/{i}/name", f"duplicate knot name {k.name!r}",
                  "duplicate-knot")
        else:
            knot_order[k.name] = i
        if catalog is not None and k.name in catalog:
            error(f"/knots/{i}/name",
                  f"knot name {k.name!r} shadows a workspace layer", "name-shadows-layer")

    def layer_entry(name: str):
        return catalog.get(name) if catalog is not None else None

    def check_layer_ref(name: str, path: str, *, want: str | None) -> None:
        """want: "thematic" | "physical" | None (either)."""
        if catalog is None:
            return
        entry = catalog.get(name)
        if entry is None:
            error(path, f"unknown layer or knot {name!r}", "unresolved-reference")
            return
        if want and entry.layer_type != want:
            code = ("thematic-out-ref" if want == "physical" else "bad-layer-kind")
            error(path, f"layer {name!r} is {entry.layer_type}, expected {want}", code)

    def knot_declared_before(name: str, index: int) -> bool:
        return name in knot_order and knot_order[name] < index

    names = {k.name: k for k in spec.knots}

    for i, k in enumerate(spec.knots):
        kpath = f"/knots/{i}"
        if k.is_operation:
            expr_path = (f"{kpath}/integration_scheme/0/operation"
                         if k.schemes else f"{kpath}/operation")
            try:
                ast = exprlang.parse_expression(k.operation_expr)
            except exprlang.ExprSyntaxError as exc:
                error(expr_path, str(exc), "expression-syntax")
                ast = None
            for ref in k.inputs:
                rpath = (f"{kpath}/integration_scheme/0" if k.schemes
                         else f"{kpath}/inputs")
                if ref not in knot_order:
                    error(rpath, f"operation input {ref!r} is not a knot",
                          "expression-needs-knots")
                elif not knot_declared_before(ref, i):
                    error(rpath, f"input knot {ref!r} must be declared before {k.name!r}",
                          "forward-reference")
            env = k.alias_map()
            for alias, target in k.aliases:
                if target not in k.inputs:
                    error(f"{kpath}/aliases",
                          f"alias {alias!r} targets {target!r}, which is not an input",
                          "alias-target-not-input")
            if ast is not None:
                for ident in exprlang.identifiers(ast):
                    if ident not in env:
                        error(expr_path, f"unbound identifier {ident!r}",
                              "unbound-identifier")
            layers = []
            for ref in k.inputs:
                if ref in names and knot_declared_before(ref, i):
                    layers.append(resolve_final_layer(spec, names[ref]))
            resolved = [l for l in layers if l is not None]
            if resolved and len(set(resolved)) > 1:
                error(kpath,
                      f"operation inputs land on different physical layers: "
                      f"{sorted(set(resolved))}", "operation-layer-mismatch")
            if k.schemes and k.schemes[0].relation == "nearest":
                warning(f"{kpath}/integration_scheme/0/spatial_relation",
                        "nearest between knots on one physical layer is redundant; "
                        "values align by coordinate index", "redundant-nearest")
            continue

        frame_layer: str | None = None
        for j, s in enumerate(k.schemes):
            spath = f"{kpath}/integration_scheme/{j}"
            if s.relation is None:
                error(f"{spath}", "integration scheme requires spatial_relation",
                      "missing-relation")
                continue
            if s.operation is not None and s.operation not in AGGREGATIONS:
                error(f"{spath}/operation",
                      "join schemes take an aggregation (min, max, sum, mean, count); "
                      "expressions belong to operation knots", "expression-needs-knots")
            if s.relation in STATIC_ONE_TO_MANY and s.operation is None:
                error(f"{spath}", f"relation {s.relation!r} is one-to-many and needs "
                      f"an aggregation", "missing-aggregation")
            if s.relation in ("contains", "intersects") and s.out_level == "coordinates":
                error(f"{spath}/out_level",
                      f"{s.relation!r} joins aggregate onto objects", "relation-level")
            if s.relation == "inner_aggregate":
                if s.in_ref != s.out_ref:
                    error(f"{spath}", "inner_aggregate stays on one layer "
                          "(in and out must match)", "inner-aggregate-same-layer")
                if s.out_level != "objects":
                    error(f"{spath}/out_level", "inner_aggregate collapses "
                          "coordinates onto objects", "relation-level")

            if j == 0:
                if s.in_ref in knot_order:
                    if not knot_declared_before(s.in_ref, i):
                        error(f"{spath}/in", f"knot {s.in_ref!r} must be declared "
                              f"before {k.name!r}", "forward-reference")
                else:
                    want = "thematic" if s.relation != "inner_aggregate" else "physical"
                    check_layer_ref(s.in_ref, f"{spath}/in", want=want)
            else:
                if s.in_ref != frame_layer and frame_layer is not None:
                    error(f"{spath}/in",
                          f"chained scheme input {s.in_ref!r} must continue the "
                          f"running layer {frame_layer!r}", "chain-mismatch")

            if s.out_ref in knot_order:
                if not knot_declared_before(s.out_ref, i):
                    error(f"{spath}/out", f"knot {s.out_ref!r} must be declared "
                          f"before {k.name!r}", "forward-reference")
                frame_layer = resolve_final_layer(spec, names[s.out_ref]) \
                    if knot_declared_before(s.out_ref, i) else None
            else:
                check_layer_ref(s.out_ref, f"{spath}/out", want="physical")
                frame_layer = s.out_ref
            if s.relation == "inner_aggregate" and j == 0 and s.in_ref == s.out_ref:
                frame_layer = s.out_ref

    # Maps and plots.
    final_layers = {k.name: resolve_final_layer(spec, k) for k in spec.knots}
    for vi, view in enumerate(spec.views):
        vpath = f"/views/{vi}"
        if view.map.camera_id not in camera_ids:
            error(f"{vpath}/map/camera",
                  f"unknown camera {view.map.camera_id!r}", "unresolved-camera")
        seen_layers: dict[str, str] = {}
        for bi, b in enumerate(view.map.bindings):
            bpath = f"{vpath}/map/knots/{bi}"
            if b.knot_id not in knot_order:
                error(f"{bpath}/knot", f"unknown knot {b.knot_id!r}", "unresolved-knot")
                continue
            layer = final_layers.get(b.knot_id)
            if layer is not None:
                if layer in seen_layers:
                    error(f"{bpath}/knot",
                          f"knots {seen_layers[layer]!r} and {b.knot_id!r} both render "
                          f"physical layer {layer!r} in one map", "duplicate-physical-layer")
                else:
                    seen_layers[layer] = b.knot_id
                if catalog is not None:
                    check_layer_ref(layer, f"{bpath}/knot", want="physical")
        for pi, p in enumerate(view.plots):
            ppath = f"{vpath}/plots/{pi}"
            for bi, b in enumerate(p.bindings):
                bpath = f"{ppath}/knots/{bi}"
                if b.knot_id not in knot_order:
                    error(f"{bpath}/knot", f"unknown knot {b.knot_id!r}",
                          "unresolved-knot")
                if b.arrangement == "embedded_surface":
                    warning(f"{bpath}/arrangement",
                            "embedded_surface parses but is not rendered by this "
                            "implementation", "unsupported-rendering")
                if b.arrangement == "embedded_footprint":
                    n = p.args.get("n_segments", 16)
                    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
                        error(f"{ppath}/args", "n_segments must be a positive integer",
                              "bad-args")
    return diags

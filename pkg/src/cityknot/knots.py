"""Knot evaluation: chained spatial joins, aggregation, filters, and
expression operations between knots, plus plot-table extraction.

A scheme chain carries values from an input element set onto the elements
of a target physical layer, one scheme at a time: resolve both element
sets, compute (or load from cache) the join map for the spatial relation,
then copy or aggregate values onto the output elements.  Values live at
either the coordinate level (one per coordinate row) or the object level
(one per object, broadcast over that object's coordinates).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import exprlang
from .geometry import (
    BoxGridIndex,
    FootprintSet,
    PointGridIndex,
    nearest_coordinates,
    point_in_polygon,
    relate,
    rings_bbox,
)
from .grammar import AGGREGATIONS, FilterDef, KnotDef
from .layers import (
    JoinMap,
    LayerError,
    PhysicalLayer,
    ThematicLayer,
    Workspace,
    in_level_digest,
    join_cache_lookup,
    join_cache_store,
)

LEVELS = ("coordinates", "objects")


class KnotEvalError(ValueError):
    """Base for evaluation failures with a healthy definition."""


class UnresolvedReference(KnotEvalError):
    """A referenced layer or knot is not available."""


class CountMismatch(KnotEvalError):
    """direct joins require equal element counts."""


class MissingAggregation(KnotEvalError):
    """An output element received several values with no aggregation."""


class KnotTypeError(TypeError):
    """Numeric work over text values, or a failing expression element."""


class LevelUnavailable(KnotEvalError):
    """Object-level data requested from a coordinate-level knot."""


class NoSamplesInBand(KnotEvalError):
    """Footprint slice height band contains no coordinates."""


class ObjectNotFound(KnotEvalError):
    pass


# ---------------------------------------------------------------------------
# evaluated values


@dataclass
class EvaluatedKnot:
    """Values of a knot pinned to its final physical layer.

    coord_values always covers every coordinate row; at object level the
    per-object values are kept too and coord_values is their broadcast.
    """

    name: str
    physical_layer: str
    level: str
    coord_values: list
    object_values: list | None = None
    provenance: tuple = ()

    def values_at(self, level: str) -> list:
        if level == "coordinates":
            return self.coord_values
        if level == "objects":
            if self.object_values is None:
                raise LevelUnavailable(
                    f"knot {self.name!r} holds coordinate-level values; "
                    f"object-level data is not available")
            return self.object_values
        raise KnotEvalError(f"unknown level {level!r}")


def _broadcast(layer: PhysicalLayer, object_values: list) -> list:
    out: list = []
    offsets = layer.offsets
    for i, v in enumerate(object_values):
        out.extend([v] * int(offsets[i + 1] - offsets[i]))
    return out


def _make_result(name, layer, level, values, provenance) -> EvaluatedKnot:
    if level == "objects":
        return EvaluatedKnot(
            name=name, physical_layer=layer.name, level="objects",
            coord_values=_broadcast(layer, values), object_values=list(values),
            provenance=tuple(provenance))
    return EvaluatedKnot(
        name=name, physical_layer=layer.name, level="coordinates",
        coord_values=list(values), object_values=None,
        provenance=tuple(provenance))


# ---------------------------------------------------------------------------
# aggregation


def aggregate_values(matched: list, kind: str):
    """Reduce one output element's matched values.

    Nulls are dropped first: count is the non-null tally (0 for none), the
    numeric kinds yield null on an empty remainder and reject text.  Sums
    reduce in ascending match order via numpy for run-to-run identical
    floating point.
    """
    usable = [v for v in matched if v is not None]
    if kind == "count":
        return float(len(usable))
    if not usable:
        return None
    if any(isinstance(v, str) for v in usable):
        raise KnotTypeError(f"aggregation {kind!r} over text values")
    arr = np.asarray(usable, dtype=np.float64)
    if kind == "sum":
        return float(np.sum(arr))
    if kind == "mean":
        return float(np.sum(arr) / float(len(arr)))
    if kind == "min":
        return float(np.min(arr))
    if kind == "max":
        return float(np.max(arr))
    raise KnotEvalError(f"unknown aggregation {kind!r}")


# ---------------------------------------------------------------------------
# element sets


@dataclass
class ElementSet:
    """One side of a join: a layer pinned to a level.

    Thematic layers always sit at coordinate level (their points).  The
    content digest folds the level in so a cache entry for one level can
    never serve the other.
    """

    layer: object                # ThematicLayer | PhysicalLayer
    level: str
    frame: object                # LocalFrame for thematic projection

    def __post_init__(self):
        if isinstance(self.layer, ThematicLayer):
            self.level = "coordinates"

    @property
    def count(self) -> int:
        if isinstance(self.layer, ThematicLayer):
            return len(self.layer)
        if self.level == "objects":
            return len(self.layer.objects)
        return self.layer.coordinate_count

    def points3d(self) -> np.ndarray:
        if isinstance(self.layer, ThematicLayer):
            return self.layer.projected(self.frame)
        if self.level == "objects":
            c = self.layer.centroids()
            return np.column_stack([c, np.zeros(len(c))])
        return self.layer.all_coordinates()

    def footprints(self) -> list | None:
        if isinstance(self.layer, ThematicLayer) or self.level != "objects":
            return None
        return [o.footprint() for o in self.layer.objects]

    def digest(self) -> str | None:
        if self.layer.content_hash is None:
            return None
        return in_level_digest(self.layer.content_hash, self.level)


# ---------------------------------------------------------------------------
# join maps


def _identity_entries(n: int) -> list:
    return [[i] for i in range(n)]


def _entries_nearest(out_side: ElementSet, in_side: ElementSet) -> list:
    """Assign each input element to its nearest output element."""
    entries: list = [[] for _ in range(out_side.count)]
    if in_side.count == 0:
        return entries
    if out_side.count == 0:
        return entries
    if out_side.level == "objects":
        fps = FootprintSet(out_side.footprints())
        assign = fps.nearest(in_side.points3d()[:, :2])
    else:
        assign = nearest_coordinates(in_side.points3d(), out_side.points3d())
    for i, j in enumerate(assign):
        entries[int(j)].append(i)
    return entries


def _entries_membership(out_side: ElementSet, in_side: ElementSet,
                        invert: bool) -> list:
    """Point-in-footprint joins.

    invert=False: output objects collect the input points they contain
    (contains/intersects over point inputs).  invert=True: output points
    collect the input objects containing them (within).
    """
    if invert:
        point_side, poly_side = out_side, in_side
    else:
        point_side, poly_side = in_side, out_side
    entries: list = [[] for _ in range(out_side.count)]
    polys = poly_side.footprints()
    if polys is None or point_side.count == 0:
        return entries
    pts = point_side.points3d()[:, :2]
    index = PointGridIndex(pts)
    for p, rings in enumerate(polys):
        xmin, ymin, xmax, ymax = rings_bbox(rings)
        candidates = index.query_box(xmin, ymin, xmax, ymax)
        if not len(candidates):
            continue
        hit = point_in_polygon(pts[candidates], rings)
        for c in candidates[hit]:
            if invert:
                entries[int(c)].append(p)
            else:
                entries[p].append(int(c))
    return entries


def _entries_polygon_pair(out_side: ElementSet, in_side: ElementSet,
                          relation: str) -> list:
    """Footprint-to-footprint joins for object-level inputs."""
    entries: list = [[] for _ in range(out_side.count)]
    out_fps = out_side.footprints()
    in_fps = in_side.footprints()
    if out_fps is None or in_fps is None:
        return entries
    boxes = [rings_bbox(fp) for fp in out_fps]
    index = BoxGridIndex(boxes)
    for i, fp in enumerate(in_fps):
        xmin, ymin, xmax, ymax = rings_bbox(fp)
        for o in index.query_box(xmin, ymin, xmax, ymax):
            if relate(out_fps[o], fp, relation):
                entries[o].append(i)
    return entries


def _entries_inner_aggregate(layer: PhysicalLayer) -> list:
    offsets = layer.offsets
    return [list(range(int(offsets[i]), int(offsets[i + 1])))
            for i in range(len(layer.objects))]


def compute_join(relation: str, out_side: ElementSet, in_side: ElementSet,
                 cache_dir: str | None = None) -> tuple:
    """(entries, cache_key): ascending input indices per output element.

    Join maps depend only on geometry, so they are cached by the content
    digests of both element sets whenever those are available.
    """
    cache_key = None
    left = out_side.layer.content_hash
    right = in_side.digest()
    if cache_dir and left and right and relation != "direct":
        cached = join_cache_lookup(cache_dir, left, right, relation,
                                   out_side.level)
        if cached is not None:
            return [list(e) for e in cached.entries], cached.key_digest()

    if relation == "direct":
        if out_side.count != in_side.count:
            raise CountMismatch(
                f"direct join needs equal element counts; "
                f"out has {out_side.count}, in has {in_side.count}")
        entries = _identity_entries(out_side.count)
    elif relation == "inner_aggregate":
        entries = _entries_inner_aggregate(out_side.layer)
    elif relation == "nearest":
        if (isinstance(in_side.layer, PhysicalLayer)
                and in_side.layer.name == out_side.layer.name
                and in_side.level == out_side.level):
            # same layer, same level: alignment is the identity
            entries = _identity_entries(out_side.count)
        else:
            entries = _entries_nearest(out_side, in_side)
    elif relation in ("contains", "intersects"):
        if in_side.footprints() is None:
            entries = _entries_membership(out_side, in_side, invert=False)
        else:
            entries = _entries_polygon_pair(out_side, in_side, relation)
    elif relation == "within":
        if in_side.footprints() is None:
            # inputs are bare points; nothing can contain an output
            entries = [[] for _ in range(out_side.count)]
        elif out_side.level == "objects":
            entries = _entries_polygon_pair(out_side, in_side, "within")
        else:
            entries = _entries_membership(out_side, in_side, invert=True)
    else:
        raise KnotEvalError(f"unknown spatial relation {relation!r}")

    if cache_dir and left and right and relation != "direct":
        jm = JoinMap(left_hash=left, right_hash=right, relation=relation,
                     out_level=out_side.level,
                     entries=[list(e) for e in entries])
        join_cache_store(cache_dir, jm)
        cache_key = jm.key_digest()
    return entries, cache_key


# ---------------------------------------------------------------------------
# scheme chains


def _load_physical(workspace: Workspace, name: str) -> PhysicalLayer:
    try:
        layer = workspace.load(name)
    except LayerError as exc:
        raise UnresolvedReference(str(exc)) from exc
    if not isinstance(layer, PhysicalLayer):
        raise UnresolvedReference(f"layer {name!r} is thematic; a physical "
                                  f"target is required")
    return layer


def _resolve_in(workspace, resolved, ref):
    """(ElementSet, values) for a chain's first input."""
    frame = workspace.frame
    if ref in resolved:
        prior = resolved[ref]
        layer = _load_physical(workspace, prior.physical_layer)
        side = ElementSet(layer, prior.level, workspace.frame)
        return side, prior.values_at(prior.level)
    try:
        layer = workspace.load(ref)
    except LayerError as exc:
        raise UnresolvedReference(str(exc)) from exc
    if isinstance(layer, ThematicLayer):
        return ElementSet(layer, "coordinates", workspace.frame), layer.values
    # a bare physical input carries no values; joins over it see nulls
    side = ElementSet(layer, "coordinates", frame)
    return side, [None] * side.count


def _evaluate_chain(kdef: KnotDef, workspace: Workspace, resolved: dict,
                    warn, use_cache: bool) -> EvaluatedKnot:
    workspace.require_frame()
    cache_dir = workspace.cache_dir if use_cache else None
    state_side: ElementSet | None = None
    state_values: list | None = None
    provenance: list = []

    for j, s in enumerate(kdef.schemes):
        if j == 0:
            in_side, in_values = _resolve_in(workspace, resolved, s.in_ref)
        else:
            assert state_side is not None
            current = state_side.layer.name
            if s.in_ref != current:
                raise UnresolvedReference(
                    f"scheme {j} of {kdef.name!r} reads {s.in_ref!r} but the "
                    f"chain is on {current!r}")
            in_side, in_values = state_side, state_values

        if s.out_ref in resolved:
            out_layer = _load_physical(workspace,
                                       resolved[s.out_ref].physical_layer)
        else:
            out_layer = _load_physical(workspace, s.out_ref)
        out_side = ElementSet(out_layer, s.out_level, workspace.frame)

        entries, cache_key = compute_join(s.relation, out_side, in_side,
                                          cache_dir)

        values = []
        for o, matched in enumerate(entries):
            vals = [in_values[m] for m in matched]
            if s.operation is not None:
                values.append(aggregate_values(vals, s.operation))
            elif len(vals) == 0:
                values.append(None)
            elif len(vals) == 1:
                values.append(vals[0])
            else:
                raise MissingAggregation(
                    f"scheme {j} of {kdef.name!r}: output element {o} "
                    f"receives {len(vals)} values and no aggregation is "
                    f"declared")
        provenance.append(
            (f"{s.relation}:{s.in_ref}->{s.out_ref}@{s.out_level}",
             cache_key))
        state_side = out_side
        state_values = values

    assert state_side is not None
    return _make_result(kdef.name, state_side.layer, state_side.level,
                        state_values, provenance)


# ---------------------------------------------------------------------------
# operation knots


def _evaluate_operation(kdef: KnotDef, workspace: Workspace, resolved: dict,
                        warn) -> EvaluatedKnot:
    inputs = []
    for ref in kdef.inputs:
        if ref not in resolved:
            raise UnresolvedReference(
                f"operation knot {kdef.name!r} needs knot {ref!r}, which is "
                f"not evaluated")
        inputs.append(resolved[ref])

    layers = {k.physical_layer for k in inputs}
    if len(layers) != 1:
        raise KnotEvalError(
            f"operation inputs of {kdef.name!r} land on different physical "
            f"layers: {sorted(layers)}")
    layer = _load_physical(workspace, inputs[0].physical_layer)

    level = ("objects" if all(k.level == "objects" for k in inputs)
             else "coordinates")
    by_name = {k.name: k for k in inputs}
    arrays = {name: by_name[name].values_at(level) for name in by_name}
    n = len(next(iter(arrays.values()))) if arrays else 0
    for name, vals in arrays.items():
        if len(vals) != len(next(iter(arrays.values()))):
            raise KnotEvalError(
                f"operation inputs of {kdef.name!r} disagree in length")

    try:
        ast = exprlang.parse_expression(kdef.operation_expr)
    except exprlang.ExprSyntaxError as exc:
        raise KnotEvalError(f"operation of {kdef.name!r}: {exc}") from exc

    env_map = kdef.alias_map()    # identifier -> input knot name
    idents = [i for i in exprlang.identifiers(ast) if i in env_map]
    out = []
    for e in range(n):
        env = {ident: arrays[env_map[ident]][e] for ident in idents}
        try:
            out.append(exprlang.evaluate(
                ast, env,
                warn=(lambda msg, _e=e: warn(f"element {_e}: {msg}"))
                if warn else None))
        except exprlang.ExprTypeError as exc:
            raise KnotTypeError(f"element {e}: {exc}") from exc

    provenance = [(f"operation:{kdef.operation_expr}", None)]
    return _make_result(kdef.name, layer, level, out, provenance)


# ---------------------------------------------------------------------------
# filters


def apply_filter(knot: EvaluatedKnot, filt: FilterDef, workspace: Workspace,
                 geocoder=None) -> EvaluatedKnot:
    """Null out values whose element representative point leaves the box.

    Geometry is untouched; filtering twice with one box equals once.
    """
    if filt.kind == "address":
        if geocoder is None:
            from .geocode import OfflineGeocoder
            geocoder = OfflineGeocoder()
        bbox = geocoder.geocode(filt.address)
    else:
        bbox = filt.bbox
    lat_min, lon_min, lat_max, lon_max = bbox
    frame = workspace.require_frame()
    x0, y0, _ = frame.project(lat_min, lon_min)
    x1, y1, _ = frame.project(lat_max, lon_max)
    xmin, xmax = min(x0, x1), max(x0, x1)
    ymin, ymax = min(y0, y1), max(y0, y1)

    layer = _load_physical(workspace, knot.physical_layer)
    if knot.level == "objects":
        reps = layer.centroids()
        keep = ((reps[:, 0] >= xmin) & (reps[:, 0] <= xmax)
                & (reps[:, 1] >= ymin) & (reps[:, 1] <= ymax))
        values = [v if keep[i] else None
                  for i, v in enumerate(knot.object_values)]
    else:
        reps = layer.all_coordinates()
        keep = ((reps[:, 0] >= xmin) & (reps[:, 0] <= xmax)
                & (reps[:, 1] >= ymin) & (reps[:, 1] <= ymax))
        values = [v if keep[i] else None
                  for i, v in enumerate(knot.coord_values)]
    provenance = list(knot.provenance) + [(f"filter:{filt.kind}", None)]
    return _make_result(knot.name, layer, knot.level, values, provenance)


# ---------------------------------------------------------------------------
# entry point


def evaluate_knot(kdef: KnotDef, workspace: Workspace, resolved: dict | None
                  = None, warn=None, use_cache: bool = True,
                  geocoder=None) -> EvaluatedKnot:
    """Evaluate one knot against a workspace.

    resolved carries the already-evaluated knots this one may reference;
    the knot's own filter, when present, is applied to the result.
    """
    resolved = resolved or {}
    if kdef.is_operation:
        result = _evaluate_operation(kdef, workspace, resolved, warn)
    else:
        if not kdef.schemes:
            raise KnotEvalError(f"knot {kdef.name!r} has no schemes")
        result = _evaluate_chain(kdef, workspace, resolved, warn, use_cache)
    if kdef.filter is not None:
        result = apply_filter(result, kdef.filter, workspace,
                              geocoder=geocoder)
    return result


# ---------------------------------------------------------------------------
# plot tables


@dataclass(frozen=True)
class PlotTable:
    """Rows extracted from a knot for charting, one per element."""

    source: str
    level: str
    rows: tuple
    annotations: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        import csv
        import io
        buf = io.StringIO()
        if not self.rows:
            return ""
        fields = list(self.rows[0].keys())
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})
        return buf.getvalue()


def plot_table(knot: EvaluatedKnot, layer: PhysicalLayer,
               level: str | None = None) -> PlotTable:
    """One row per element at the requested level; nulls are kept.

    element_id is stable across evaluations: the object_id at object level,
    object_id plus the coordinate's index within its object otherwise.
    """
    level = level or knot.level
    if level == "objects":
        values = knot.values_at("objects")
        rows = tuple(
            {"element_id": layer.objects[i].object_id,
             "object_id": layer.objects[i].object_id,
             "value": values[i]}
            for i in range(len(layer.objects)))
        return PlotTable(source=knot.name, level="objects", rows=rows)
    if level != "coordinates":
        raise KnotEvalError(f"unknown level {level!r}")
    values = knot.coord_values
    offsets = layer.offsets
    rows = []
    for i, obj in enumerate(layer.objects):
        for k in range(int(offsets[i]), int(offsets[i + 1])):
            rows.append({"element_id": f"{obj.object_id}/{k - int(offsets[i])}",
                         "object_id": obj.object_id,
                         "value": values[k]})
    return PlotTable(source=knot.name, level="coordinates", rows=tuple(rows))


def footprint_slice(knot: EvaluatedKnot, layer: PhysicalLayer,
                    object_id: str, slice_height: float,
                    band_width: float, n_segments: int) -> PlotTable:
    """Radial sector means of a mesh object's values around a height band.

    Coordinates with |z - slice_height| <= band_width/2 are binned by
    azimuth around their own centroid into n_segments equal sectors,
    counter-clockwise from east; each sector's value is the mean of its
    numeric values, null when the sector is empty.
    """
    if layer.kind != "mesh3d":
        raise KnotEvalError(
            f"footprint slice needs a mesh3d layer, not {layer.kind!r}")
    if n_segments < 1:
        raise KnotEvalError("n_segments must be positive")
    try:
        idx = layer.object_index(object_id)
    except LayerError as exc:
        raise ObjectNotFound(str(exc)) from exc

    offsets = layer.offsets
    start, end = int(offsets[idx]), int(offsets[idx + 1])
    coords = layer.all_coordinates()[start:end]
    in_band = np.abs(coords[:, 2] - slice_height) <= band_width / 2.0
    if not np.any(in_band):
        raise NoSamplesInBand(
            f"no coordinates of {object_id!r} within {band_width / 2.0} m "
            f"of height {slice_height}")

    band = coords[in_band]
    values = [knot.coord_values[start + k]
              for k in np.flatnonzero(in_band)]
    cx = float(np.sum(band[:, 0]) / len(band))
    cy = float(np.sum(band[:, 1]) / len(band))

    width = 2.0 * math.pi / n_segments
    sector_of = []
    for x, y in band[:, :2]:
        theta = math.atan2(y - cy, x - cx) % (2.0 * math.pi)
        sector_of.append(min(int(theta / width), n_segments - 1))

    rows = []
    for s in range(n_segments):
        sector_vals = [values[k] for k in range(len(values))
                       if sector_of[k] == s]
        usable = [v for v in sector_vals if v is not None]
        if any(isinstance(v, str) for v in usable):
            raise KnotTypeError("footprint slice over text values")
        value = (float(np.sum(np.asarray(usable, dtype=np.float64))
                       / len(usable)) if usable else None)
        rows.append({
            "element_id": f"{object_id}/sector/{s}",
            "object_id": object_id,
            "sector": s,
            "angle_start": math.degrees(s * width),
            "angle_end": math.degrees((s + 1) * width),
            "value": value,
        })
    return PlotTable(source=knot.name, level="sectors", rows=tuple(rows),
                     annotations={"object_id": object_id,
                                  "slice_height": float(slice_height),
                                  "centroid": [cx, cy]})

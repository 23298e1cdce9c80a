"""Knot evaluation against brute-force join references, plus operation
knots, filters, and plot extraction."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cityknot.geocode import FixedGeocoder, GeocoderUnavailable
from cityknot.geometry import LocalFrame, point_polygon_d2
from cityknot.grammar import FilterDef, KnotDef, SchemeDef
from cityknot.ingest import make_grid
from cityknot.knots import (
    CountMismatch,
    EvaluatedKnot,
    KnotEvalError,
    KnotTypeError,
    LevelUnavailable,
    MissingAggregation,
    NoSamplesInBand,
    ObjectNotFound,
    PlotTable,
    UnresolvedReference,
    aggregate_values,
    apply_filter,
    evaluate_knot,
    footprint_slice,
    plot_table,
)
from cityknot.layers import (
    PhysicalLayer,
    PhysicalObject,
    ThematicLayer,
    Workspace,
)
from oracles import (
    rect_relate,
    reference_aggregate,
    scan_nearest_coordinates,
    scan_nearest_objects,
    winding_point_in_polygon,
)

ORIGIN = (40.7128, -74.0060)
FRAME = LocalFrame(*ORIGIN)


# ---------------------------------------------------------------------------
# builders


def local_thematic(name, xyz, values):
    pts = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    geo = FRAME.unproject_points(pts) if len(pts) else np.zeros((0, 3))
    return ThematicLayer(name=name, points=geo, values=list(values),
                         crs_origin=ORIGIN)


def rect_object(object_id, x0, y0, x1, y1):
    ring = np.array([[x0, y0, 0.0], [x1, y0, 0.0],
                     [x1, y1, 0.0], [x0, y1, 0.0]])
    return PhysicalObject(object_id, ring, rings=[[0, 1, 2, 3]])


def rect_layer(name, rects, kind="polygons2d"):
    objs = [rect_object(f"{name}/{i}", *r) for i, r in enumerate(rects)]
    return PhysicalLayer(name=name, kind=kind, objects=objs,
                         crs_origin=ORIGIN)


def workspace_with(tmp_path, layers):
    ws = Workspace(str(tmp_path / "ws"))
    for layer in layers:
        ws.save(layer)
    ws.invalidate()
    return ws


def scheme(in_ref, out_ref, relation, out_level, operation=None):
    return SchemeDef(in_ref=in_ref, out_ref=out_ref, relation=relation,
                     out_level=out_level, operation=operation)


def join_knot(name, *schemes_, filter=None):
    return KnotDef(name=name, schemes=tuple(schemes_), filter=filter)


def op_knot(name, expr, inputs, aliases=(), filter=None):
    return KnotDef(name=name, operation_expr=expr, inputs=tuple(inputs),
                   aliases=tuple(aliases), filter=filter)


def geodetic_box(xmin, ymin, xmax, ymax):
    lat0, lon0, _ = FRAME.unproject(xmin, ymin)
    lat1, lon1, _ = FRAME.unproject(xmax, ymax)
    return (float(lat0), float(lon0), float(lat1), float(lon1))


# ---------------------------------------------------------------------------
# brute-force reference evaluation


def copy_or_aggregate(matched_values, operation):
    if operation is not None:
        return reference_aggregate(matched_values, operation)
    if len(matched_values) == 0:
        return None
    if len(matched_values) == 1:
        return matched_values[0]
    raise AssertionError("reference instance should not be one-to-many")


def reference_points_into_polygons(points_xy, values, footprints, operation):
    """contains/intersects of point inputs, by winding-number membership."""
    out = []
    for rings in footprints:
        matched = [values[i] for i in range(len(points_xy))
                   if winding_point_in_polygon(points_xy[i][0],
                                               points_xy[i][1], rings)]
        out.append(copy_or_aggregate(matched, operation))
    return out


def reference_within_coords(out_points_xy, in_footprints, in_values,
                            operation):
    out = []
    for px, py in out_points_xy:
        matched = [in_values[j] for j, rings in enumerate(in_footprints)
                   if winding_point_in_polygon(px, py, rings)]
        out.append(copy_or_aggregate(matched, operation))
    return out


def reference_nearest_coords(in_points, in_values, out_points, operation):
    assign = scan_nearest_coordinates(in_points, out_points)
    out = []
    for o in range(len(out_points)):
        matched = [in_values[i] for i in range(len(in_values))
                   if assign[i] == o]
        out.append(copy_or_aggregate(matched, operation))
    return out


class _FootprintD2:
    def __init__(self, footprints):
        self.footprints = footprints
        self.count = len(footprints)

    def __call__(self, px, py, j):
        return point_polygon_d2(px, py, self.footprints[j])


def reference_nearest_objects(in_points_xy, in_values, footprints, operation):
    assign = scan_nearest_objects(np.asarray(in_points_xy),
                                  _FootprintD2(footprints))
    out = []
    for o in range(len(footprints)):
        matched = [in_values[i] for i in range(len(in_values))
                   if assign[i] == o]
        out.append(copy_or_aggregate(matched, operation))
    return out


def reference_rect_pairs(out_rects, in_rects, in_values, relation, operation):
    out = []
    for a in out_rects:
        matched = [in_values[j] for j, b in enumerate(in_rects)
                   if rect_relate(a, b, relation)]
        out.append(copy_or_aggregate(matched, operation))
    return out


def random_values(rng, n, null_share=0.12):
    vals = [float(v) for v in rng.normal(10.0, 4.0, size=n)]
    for i in rng.choice(n, size=int(n * null_share), replace=False):
        vals[int(i)] = None
    return vals


def random_rects(rng, count, span=400.0, wmin=8.0, wmax=120.0):
    out = []
    for _ in range(count):
        x0 = float(rng.uniform(-span, span))
        y0 = float(rng.uniform(-span, span))
        w = float(rng.uniform(wmin, wmax))
        h = float(rng.uniform(wmin, wmax))
        out.append((x0, y0, x0 + w, y0 + h))
    return out


# ---------------------------------------------------------------------------
# randomized oracle equality


class TestJoinOracle:
    @pytest.mark.parametrize("seed,operation", [
        (1, "sum"), (2, "mean"), (3, "min"), (4, "max"), (5, "count"),
        (6, "sum"), (7, "mean"),
    ])
    def test_contains_matches_brute_force(self, tmp_path, seed, operation):
        rng = np.random.default_rng(seed)
        n_pts = int(rng.integers(50, 800))
        rects = random_rects(rng, int(rng.integers(3, 60)))
        pts = np.column_stack([rng.uniform(-450, 450, n_pts),
                               rng.uniform(-450, 450, n_pts),
                               np.zeros(n_pts)])
        values = random_values(rng, n_pts)
        ws = workspace_with(tmp_path, [
            local_thematic("noise", pts, values),
            rect_layer("zips", rects),
        ])
        kdef = join_knot("k", scheme("noise", "zips", "contains", "objects",
                                     operation))
        got = evaluate_knot(kdef, ws)
        zips = ws.load("zips")
        noise = ws.load("noise")
        want = reference_points_into_polygons(
            noise.projected(FRAME)[:, :2], noise.values,
            [o.footprint() for o in zips.objects], operation)
        assert got.object_values == want
        assert got.level == "objects"

    @pytest.mark.parametrize("seed", [11, 12, 13])
    def test_intersects_on_points_matches_contains_reference(
            self, tmp_path, seed):
        rng = np.random.default_rng(seed)
        n_pts = int(rng.integers(40, 400))
        rects = random_rects(rng, int(rng.integers(3, 40)))
        pts = np.column_stack([rng.uniform(-450, 450, n_pts),
                               rng.uniform(-450, 450, n_pts),
                               np.zeros(n_pts)])
        values = random_values(rng, n_pts)
        ws = workspace_with(tmp_path, [
            local_thematic("noise", pts, values),
            rect_layer("zips", rects),
        ])
        kdef = join_knot("k", scheme("noise", "zips", "intersects", "objects",
                                     "count"))
        got = evaluate_knot(kdef, ws)
        zips = ws.load("zips")
        noise = ws.load("noise")
        want = reference_points_into_polygons(
            noise.projected(FRAME)[:, :2], noise.values,
            [o.footprint() for o in zips.objects], "count")
        assert got.object_values == want

    @pytest.mark.parametrize("seed", [21, 22, 23, 24])
    def test_nearest_coordinates_matches_scan(self, tmp_path, seed):
        rng = np.random.default_rng(seed)
        n_pts = int(rng.integers(30, 500))
        rects = random_rects(rng, int(rng.integers(2, 25)))
        pts = np.column_stack([rng.uniform(-450, 450, n_pts),
                               rng.uniform(-450, 450, n_pts),
                               rng.uniform(0, 5, n_pts)])
        values = random_values(rng, n_pts)
        ws = workspace_with(tmp_path, [
            local_thematic("noise", pts, values),
            rect_layer("zips", rects),
        ])
        kdef = join_knot("k", scheme("noise", "zips", "nearest",
                                     "coordinates", "mean"))
        got = evaluate_knot(kdef, ws)
        zips = ws.load("zips")
        noise = ws.load("noise")
        want = reference_nearest_coords(
            noise.projected(FRAME), noise.values,
            zips.all_coordinates(), "mean")
        assert got.coord_values == want
        assert got.level == "coordinates"

    @pytest.mark.parametrize("seed", [31, 32, 33])
    def test_nearest_objects_matches_scan(self, tmp_path, seed):
        rng = np.random.default_rng(seed)
        n_pts = int(rng.integers(30, 300))
        rects = random_rects(rng, int(rng.integers(2, 30)))
        pts = np.column_stack([rng.uniform(-450, 450, n_pts),
                               rng.uniform(-450, 450, n_pts),
                               np.zeros(n_pts)])
        values = random_values(rng, n_pts)
        ws = workspace_with(tmp_path, [
            local_thematic("noise", pts, values),
            rect_layer("zips", rects),
        ])
        kdef = join_knot("k", scheme("noise", "zips", "nearest", "objects",
                                     "mean"))
        got = evaluate_knot(kdef, ws)
        zips = ws.load("zips")
        noise = ws.load("noise")
        want = reference_nearest_objects(
            noise.projected(FRAME)[:, :2], noise.values,
            [o.footprint() for o in zips.objects], "mean")
        assert got.object_values == want

    @pytest.mark.parametrize("seed", [41, 42, 43])
    def test_within_broadcast_matches_brute_force(self, tmp_path, seed):
        """Chain: aggregate points onto parks, then spread each park's value
        down to the zip corners it covers."""
        rng = np.random.default_rng(seed)
        n_pts = int(rng.integers(40, 400))
        parks = random_rects(rng, int(rng.integers(2, 20)), span=300.0,
                             wmin=40.0, wmax=220.0)
        zips = random_rects(rng, int(rng.integers(2, 20)))
        pts = np.column_stack([rng.uniform(-450, 450, n_pts),
                               rng.uniform(-450, 450, n_pts),
                               np.zeros(n_pts)])
        values = random_values(rng, n_pts)
        ws = workspace_with(tmp_path, [
            local_thematic("noise", pts, values),
            rect_layer("parks", parks),
            rect_layer("zips", zips),
        ])
        base = join_knot("onto_parks",
                         scheme("noise", "parks", "contains", "objects",
                                "sum"))
        resolved = {"onto_parks": evaluate_knot(base, ws)}
        chained = join_knot("spread",
                            scheme("onto_parks", "zips", "within",
                                   "coordinates", "mean"))
        got = evaluate_knot(chained, ws, resolved=resolved)

        parks_l = ws.load("parks")
        zips_l = ws.load("zips")
        noise = ws.load("noise")
        park_vals = reference_points_into_polygons(
            noise.projected(FRAME)[:, :2], noise.values,
            [o.footprint() for o in parks_l.objects], "sum")
        want = reference_within_coords(
            zips_l.all_coordinates()[:, :2],
            [o.footprint() for o in parks_l.objects], park_vals, "mean")
        assert got.coord_values == want

    @pytest.mark.parametrize("seed,relation", [
        (51, "contains"), (52, "intersects"), (53, "within"),
        (54, "contains"), (55, "intersects"),
    ])
    def test_polygon_pairs_match_interval_arithmetic(self, tmp_path, seed,
                                                     relation):
        rng = np.random.default_rng(seed)
        n_pts = int(rng.integers(30, 200))
        parks = random_rects(rng, int(rng.integers(2, 25)), span=300.0,
                             wmin=10.0, wmax=80.0)
        zips = random_rects(rng, int(rng.integers(2, 25)), span=300.0,
                            wmin=30.0, wmax=300.0)
        pts = np.column_stack([rng.uniform(-380, 380, n_pts),
                               rng.uniform(-380, 380, n_pts),
                               np.zeros(n_pts)])
        values = random_values(rng, n_pts, null_share=0.0)
        ws = workspace_with(tmp_path, [
            local_thematic("noise", pts, values),
            rect_layer("parks", parks),
            rect_layer("zips", zips),
        ])
        base = join_knot("onto_parks",
                         scheme("noise", "parks", "contains", "objects",
                                "count"))
        resolved = {"onto_parks": evaluate_knot(base, ws)}
        kdef = join_knot("pair", scheme("onto_parks", "zips", relation,
                                        "objects", "sum"))
        got = evaluate_knot(kdef, ws, resolved=resolved)

        parks_l = ws.load("parks")
        noise = ws.load("noise")
        park_vals = reference_points_into_polygons(
            noise.projected(FRAME)[:, :2], noise.values,
            [o.footprint() for o in parks_l.objects], "count")

        def local_rect(obj):
            fp = obj.footprint()[0]
            return (float(fp[:, 0].min()), float(fp[:, 1].min()),
                    float(fp[:, 0].max()), float(fp[:, 1].max()))

        out_rects = [local_rect(o) for o in ws.load("zips").objects]
        in_rects = [local_rect(o) for o in parks_l.objects]
        want = reference_rect_pairs(out_rects, in_rects, park_vals,
                                    relation, "sum")
        assert got.object_values == want

    def test_large_instance_contains_sum(self, tmp_path):
        rng = np.random.default_rng(99)
        n_pts = 2000
        rects = random_rects(rng, 100)
        pts = np.column_stack([rng.uniform(-450, 450, n_pts),
                               rng.uniform(-450, 450, n_pts),
                               np.zeros(n_pts)])
        values = random_values(rng, n_pts)
        ws = workspace_with(tmp_path, [
            local_thematic("noise", pts, values),
            rect_layer("zips", rects),
        ])
        kdef = join_knot("k", scheme("noise", "zips", "contains", "objects",
                                     "sum"))
        got = evaluate_knot(kdef, ws)
        zips = ws.load("zips")
        noise = ws.load("noise")
        want = reference_points_into_polygons(
            noise.projected(FRAME)[:, :2], noise.values,
            [o.footprint() for o in zips.objects], "sum")
        assert got.object_values == want


# ---------------------------------------------------------------------------
# join semantics


class TestJoinSemantics:
    def test_direct_copies_by_index(self, tmp_path):
        pts = [[i * 10.0, 0.0, 0.0] for i in range(8)]
        rects = [(i * 10.0 - 2, -2, i * 10.0 + 2, 2) for i in range(2)]
        ws = workspace_with(tmp_path, [
            local_thematic("vals", pts, [1.0, None, 'x', 4.0, 5.0, 6.0,
                                         7.0, 8.0]),
            rect_layer("cells", rects),
        ])
        kdef = join_knot("k", scheme("vals", "cells", "direct",
                                     "coordinates"))
        got = evaluate_knot(kdef, ws)
        assert got.coord_values == [1.0, None, 'x', 4.0, 5.0, 6.0, 7.0, 8.0]

    def test_direct_count_mismatch(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("vals", [[0, 0, 0]], [1.0]),
            rect_layer("cells", [(0, 0, 5, 5), (10, 0, 15, 5)]),
        ])
        kdef = join_knot("k", scheme("vals", "cells", "direct",
                                     "coordinates"))
        with pytest.raises(CountMismatch):
            evaluate_knot(kdef, ws)

    def test_nearest_collision_without_aggregation(self, tmp_path):
        # two points share one nearest corner
        ws = workspace_with(tmp_path, [
            local_thematic("vals", [[0.1, 0.1, 0], [0.2, 0.2, 0]],
                           [1.0, 2.0]),
            rect_layer("cells", [(0, 0, 100, 100)]),
        ])
        kdef = join_knot("k", scheme("vals", "cells", "nearest",
                                     "coordinates"))
        with pytest.raises(MissingAggregation):
            evaluate_knot(kdef, ws)

    def test_unmatched_outputs_are_null_not_zero(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("vals", [[2.0, 2.0, 0.0]], [7.0]),
            rect_layer("cells", [(0, 0, 5, 5), (100, 100, 105, 105)]),
        ])
        kdef = join_knot("k", scheme("vals", "cells", "contains", "objects",
                                     "sum"))
        got = evaluate_knot(kdef, ws)
        assert got.object_values == [7.0, None]

    def test_count_distinguishes_empty_from_zero(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("vals", [[2.0, 2.0, 0.0]], [0.0]),
            rect_layer("cells", [(0, 0, 5, 5), (100, 100, 105, 105)]),
        ])
        kdef = join_knot("k", scheme("vals", "cells", "contains", "objects",
                                     "count"))
        got = evaluate_knot(kdef, ws)
        assert got.object_values == [1.0, 0.0]

    def test_empty_thematic_layer(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("vals", np.zeros((0, 3)), []),
            rect_layer("cells", [(0, 0, 5, 5)]),
        ])
        summed = evaluate_knot(
            join_knot("s", scheme("vals", "cells", "contains", "objects",
                                  "sum")), ws)
        counted = evaluate_knot(
            join_knot("c", scheme("vals", "cells", "contains", "objects",
                                  "count")), ws)
        assert summed.object_values == [None]
        assert counted.object_values == [0.0]

    def test_numeric_aggregation_over_text_raises(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("mats", [[1, 1, 0], [2, 2, 0]],
                           ["brick", "granite"]),
            rect_layer("cells", [(0, 0, 5, 5)]),
        ])
        kdef = join_knot("k", scheme("mats", "cells", "contains", "objects",
                                     "sum"))
        with pytest.raises(KnotTypeError):
            evaluate_knot(kdef, ws)

    def test_count_over_text_is_fine(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("mats", [[1, 1, 0], [2, 2, 0], [9, 9, 0]],
                           ["brick", "granite", None]),
            rect_layer("cells", [(0, 0, 10, 10)]),
        ])
        kdef = join_knot("k", scheme("mats", "cells", "contains", "objects",
                                     "count"))
        got = evaluate_knot(kdef, ws)
        assert got.object_values == [2.0]

    def test_text_value_survives_single_copy(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("mats", [[1.0, 1.0, 0.0]], ["brick"]),
            rect_layer("cells", [(0, 0, 5, 5)]),
        ])
        kdef = join_knot("k", scheme("mats", "cells", "nearest",
                                     "coordinates"))
        got = evaluate_knot(kdef, ws)
        assert "brick" in got.coord_values
        assert sum(v == "brick" for v in got.coord_values) == 1

    def test_unknown_layer_is_unresolved(self, tmp_path):
        ws = workspace_with(tmp_path, [
            rect_layer("cells", [(0, 0, 5, 5)]),
        ])
        kdef = join_knot("k", scheme("ghost", "cells", "contains", "objects",
                                     "sum"))
        with pytest.raises(UnresolvedReference):
            evaluate_knot(kdef, ws)

    def test_unknown_out_layer_is_unresolved(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("vals", [[0, 0, 0]], [1.0]),
            rect_layer("anchor", [(0, 0, 5, 5)]),
        ])
        kdef = join_knot("k", scheme("vals", "ghost", "contains", "objects",
                                     "sum"))
        with pytest.raises(UnresolvedReference):
            evaluate_knot(kdef, ws)

    def test_thematic_out_target_is_unresolved(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("vals", [[0, 0, 0]], [1.0]),
            local_thematic("vals2", [[0, 0, 0]], [2.0]),
            rect_layer("anchor", [(0, 0, 5, 5)]),
        ])
        kdef = join_knot("k", scheme("vals", "vals2", "nearest",
                                     "coordinates"))
        with pytest.raises(UnresolvedReference):
            evaluate_knot(kdef, ws)

    def test_inner_aggregate_collapses_to_objects(self, tmp_path):
        rects = [(0, 0, 10, 10), (50, 0, 60, 10)]
        # corner values: object 0 gets 1..4, object 1 gets 10..40
        pts = [[0, 0, 0], [10, 0, 0], [10, 10, 0], [0, 10, 0],
               [50, 0, 0], [60, 0, 0], [60, 10, 0], [50, 10, 0]]
        vals = [1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]
        ws = workspace_with(tmp_path, [
            local_thematic("vals", pts, vals),
            rect_layer("cells", rects),
        ])
        kdef = join_knot(
            "k",
            scheme("vals", "cells", "nearest", "coordinates"),
            scheme("cells", "cells", "inner_aggregate", "objects", "mean"))
        got = evaluate_knot(kdef, ws)
        assert got.object_values == [2.5, 25.0]
        assert got.level == "objects"

    def test_chain_through_knot_out_ref(self, tmp_path):
        """out_ref naming a knot resolves to that knot's physical layer."""
        ws = workspace_with(tmp_path, [
            local_thematic("vals", [[2, 2, 0], [3, 3, 0]], [1.0, 5.0]),
            rect_layer("cells", [(0, 0, 5, 5)]),
        ])
        base = evaluate_knot(
            join_knot("base", scheme("vals", "cells", "contains", "objects",
                                     "sum")), ws)
        via_knot = evaluate_knot(
            join_knot("k", scheme("vals", "base", "contains", "objects",
                                  "mean")),
            ws, resolved={"base": base})
        direct = evaluate_knot(
            join_knot("k2", scheme("vals", "cells", "contains", "objects",
                                   "mean")), ws)
        assert via_knot.object_values == direct.object_values

    def test_chain_frame_mismatch_is_unresolved(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("vals", [[2, 2, 0]], [1.0]),
            rect_layer("cells", [(0, 0, 5, 5)]),
            rect_layer("other", [(0, 0, 5, 5)]),
        ])
        kdef = join_knot(
            "k",
            scheme("vals", "cells", "contains", "objects", "sum"),
            scheme("other", "other", "inner_aggregate", "objects", "mean"))
        with pytest.raises(UnresolvedReference):
            evaluate_knot(kdef, ws)

    def test_nearest_same_layer_same_level_is_identity(self, tmp_path):
        # duplicate coordinates would make true nearest ambiguous; identity
        # alignment keeps each coordinate's own value
        ring = [(0, 0, 10, 10)]
        pts = [[0, 0, 0], [10, 0, 0], [10, 10, 0], [0, 10, 0]]
        ws = workspace_with(tmp_path, [
            local_thematic("vals", pts, [1.0, 2.0, 3.0, 4.0]),
            rect_layer("cells", ring),
        ])
        base = evaluate_knot(
            join_knot("base", scheme("vals", "cells", "nearest",
                                     "coordinates")), ws)
        aligned = evaluate_knot(
            join_knot("k", scheme("base", "cells", "nearest",
                                  "coordinates")),
            ws, resolved={"base": base})
        assert aligned.coord_values == base.coord_values

    def test_shadow_sample_chain_to_building_means(self, tmp_path):
        """Coordinate-level nearest then inner_aggregate mean equals the
        scan-and-group reference."""
        rng = np.random.default_rng(7)
        b0 = rect_object("b/0", 0, 0, 10, 10)
        b1 = rect_object("b/1", 100, 0, 112, 12)
        buildings = PhysicalLayer(name="buildings", kind="mesh3d",
                                  objects=[b0, b1], crs_origin=ORIGIN)
        coords = buildings.all_coordinates()
        jitter = rng.normal(0.0, 0.05, size=coords.shape)
        samples = coords + jitter
        values = [float(v) for v in rng.uniform(0, 1, len(samples))]
        ws = workspace_with(tmp_path, [
            local_thematic("shadow", samples, values),
            buildings,
        ])
        kdef = join_knot(
            "per_building",
            scheme("shadow", "buildings", "nearest", "coordinates"),
            scheme("buildings", "buildings", "inner_aggregate", "objects",
                   "mean"))
        got = evaluate_knot(kdef, ws)

        loaded = ws.load("buildings")
        thematic = ws.load("shadow")
        assign = scan_nearest_coordinates(thematic.projected(FRAME),
                                          loaded.all_coordinates())
        coord_vals = [None] * loaded.coordinate_count
        for i, j in enumerate(assign):
            assert coord_vals[int(j)] is None
            coord_vals[int(j)] = thematic.values[i]
        offsets = loaded.offsets
        want = [reference_aggregate(
                    coord_vals[int(offsets[i]):int(offsets[i + 1])], "mean")
                for i in range(len(loaded.objects))]
        assert got.object_values == want

    def test_determinism_across_evaluations(self, tmp_path):
        rng = np.random.default_rng(17)
        n = 300
        pts = np.column_stack([rng.uniform(-200, 200, n),
                               rng.uniform(-200, 200, n), np.zeros(n)])
        ws = workspace_with(tmp_path, [
            local_thematic("vals", pts, random_values(rng, n)),
            rect_layer("cells", random_rects(rng, 30, span=200.0)),
        ])
        kdef = join_knot("k", scheme("vals", "cells", "contains", "objects",
                                     "sum"))
        first = evaluate_knot(kdef, ws)
        second = evaluate_knot(kdef, ws)         # cache warm
        third = evaluate_knot(kdef, ws, use_cache=False)
        assert first.object_values == second.object_values
        assert first.object_values == third.object_values


# ---------------------------------------------------------------------------
# broadcast invariant


class TestBroadcastInvariant:
    def test_object_level_broadcast(self, tmp_path):
        rng = np.random.default_rng(23)
        n = 120
        pts = np.column_stack([rng.uniform(-200, 200, n),
                               rng.uniform(-200, 200, n), np.zeros(n)])
        ws = workspace_with(tmp_path, [
            local_thematic("vals", pts, random_values(rng, n)),
            rect_layer("cells", random_rects(rng, 12, span=200.0)),
        ])
        kdef = join_knot("k", scheme("vals", "cells", "contains", "objects",
                                     "mean"))
        got = evaluate_knot(kdef, ws)
        layer = ws.load("cells")
        offsets = layer.offsets
        assert len(got.coord_values) == layer.coordinate_count
        assert len(got.object_values) == len(layer.objects)
        for i in range(len(layer.objects)):
            for k in range(int(offsets[i]), int(offsets[i + 1])):
                assert got.coord_values[k] == got.object_values[i]

    def test_coordinate_level_has_no_object_values(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("vals", [[1, 1, 0]], [3.0]),
            rect_layer("cells", [(0, 0, 5, 5)]),
        ])
        got = evaluate_knot(
            join_knot("k", scheme("vals", "cells", "nearest",
                                  "coordinates")), ws)
        assert got.object_values is None
        with pytest.raises(LevelUnavailable):
            got.values_at("objects")


# ---------------------------------------------------------------------------
# join cache


class TestJoinCache:
    def test_cache_round_trip_and_reuse(self, tmp_path):
        import json
        import os
        rng = np.random.default_rng(29)
        n = 50
        pts = np.column_stack([rng.uniform(-50, 50, n),
                               rng.uniform(-50, 50, n), np.zeros(n)])
        ws = workspace_with(tmp_path, [
            local_thematic("vals", pts,
                           [float(i) for i in range(n)]),
            rect_layer("cells", [(-60, -60, 0, 0), (0, -60, 60, 60)]),
        ])
        kdef = join_knot("k", scheme("vals", "cells", "contains", "objects",
                                     "count"))
        first = evaluate_knot(kdef, ws)
        files = os.listdir(ws.cache_dir)
        assert len(files) == 1

        # tampering with the cached entries changes the result: proof the
        # second evaluation reads the cache instead of recomputing
        path = os.path.join(ws.cache_dir, files[0])
        with open(path) as fh:
            doc = json.load(fh)
        doc["entries"] = [[] for _ in doc["entries"]]
        with open(path, "w") as fh:
            json.dump(doc, fh)
        tampered = evaluate_knot(kdef, ws)
        assert tampered.object_values == [0.0, 0.0]
        assert first.object_values != tampered.object_values

        # bypassing the cache restores the true result
        clean = evaluate_knot(kdef, ws, use_cache=False)
        assert clean.object_values == first.object_values

    def test_levels_get_distinct_cache_slots(self, tmp_path):
        import os
        rng = np.random.default_rng(31)
        n = 30
        pts = np.column_stack([rng.uniform(-50, 50, n),
                               rng.uniform(-50, 50, n), np.zeros(n)])
        parks = rect_layer("parks", [(-20, -20, 20, 20)])
        zips = rect_layer("zips", [(-60, -60, 60, 60)])
        ws = workspace_with(tmp_path, [
            local_thematic("vals", pts, [1.0] * n), parks, zips,
        ])
        base = evaluate_knot(
            join_knot("base", scheme("vals", "parks", "contains", "objects",
                                     "sum")), ws)
        evaluate_knot(
            join_knot("k1", scheme("base", "zips", "within", "coordinates",
                                   "mean")),
            ws, resolved={"base": base})
        evaluate_knot(
            join_knot("k2", scheme("base", "zips", "within", "objects",
                                   "mean")),
            ws, resolved={"base": base})
        # contains cache + two within caches at different levels
        assert len(os.listdir(ws.cache_dir)) == 3


# ---------------------------------------------------------------------------
# filters


def grid_knot_workspace(tmp_path):
    grid = make_grid((ORIGIN[0], ORIGIN[1],
                      FRAME.unproject(100.0, 100.0)[0],
                      FRAME.unproject(100.0, 100.0)[1]),
                     cell=10.0, origin=ORIGIN, name="grid")
    centers = []
    for obj in grid.objects:
        fp = obj.footprint()[0]
        centers.append([float(fp[:, 0].mean()), float(fp[:, 1].mean()), 0.0])
    vals = [float(i) for i in range(len(grid.objects))]
    ws = Workspace(str(tmp_path / "ws"))
    ws.save(grid)
    ws.save(local_thematic("cellvals", centers, vals))
    ws.invalidate()
    return ws


class TestFilters:
    def test_box_covering_everything_is_identity(self, tmp_path):
        ws = grid_knot_workspace(tmp_path)
        kdef = join_knot("k", scheme("cellvals", "grid", "contains",
                                     "objects", "mean"))
        plain = evaluate_knot(kdef, ws)
        filtered = apply_filter(
            plain, FilterDef(kind="bounding_box",
                             bbox=geodetic_box(-10, -10, 110, 110)), ws)
        assert filtered.object_values == plain.object_values

    def test_box_covering_nothing_nulls_everything(self, tmp_path):
        ws = grid_knot_workspace(tmp_path)
        kdef = join_knot("k", scheme("cellvals", "grid", "contains",
                                     "objects", "mean"))
        plain = evaluate_knot(kdef, ws)
        filtered = apply_filter(
            plain, FilterDef(kind="bounding_box",
                             bbox=geodetic_box(500, 500, 600, 600)), ws)
        assert filtered.object_values == [None] * len(plain.object_values)

    def test_half_box_on_ten_by_ten_grid_keeps_fifty(self, tmp_path):
        ws = grid_knot_workspace(tmp_path)
        kdef = join_knot("k", scheme("cellvals", "grid", "contains",
                                     "objects", "mean"))
        plain = evaluate_knot(kdef, ws)
        filtered = apply_filter(
            plain, FilterDef(kind="bounding_box",
                             bbox=geodetic_box(-5, -5, 105, 50)), ws)
        kept = [v for v in filtered.object_values if v is not None]
        assert len(kept) == 50
        assert len(plain.object_values) == 100

    def test_filter_is_idempotent(self, tmp_path):
        ws = grid_knot_workspace(tmp_path)
        kdef = join_knot("k", scheme("cellvals", "grid", "contains",
                                     "objects", "mean"))
        plain = evaluate_knot(kdef, ws)
        box = FilterDef(kind="bounding_box",
                        bbox=geodetic_box(20, 20, 80, 80))
        once = apply_filter(plain, box, ws)
        twice = apply_filter(once, box, ws)
        assert once.object_values == twice.object_values
        assert once.coord_values == twice.coord_values

    def test_filter_in_knot_definition(self, tmp_path):
        ws = grid_knot_workspace(tmp_path)
        kdef = join_knot(
            "k", scheme("cellvals", "grid", "contains", "objects", "mean"),
            filter=FilterDef(kind="bounding_box",
                             bbox=geodetic_box(500, 500, 600, 600)))
        got = evaluate_knot(kdef, ws)
        assert got.object_values == [None] * 100

    def test_address_filter_needs_geocoder(self, tmp_path):
        ws = grid_knot_workspace(tmp_path)
        kdef = join_knot(
            "k", scheme("cellvals", "grid", "contains", "objects", "mean"),
            filter=FilterDef(kind="address", address="downtown"))
        with pytest.raises(GeocoderUnavailable):
            evaluate_knot(kdef, ws)

    def test_address_filter_with_table_geocoder(self, tmp_path):
        ws = grid_knot_workspace(tmp_path)
        kdef = join_knot(
            "k", scheme("cellvals", "grid", "contains", "objects", "mean"),
            filter=FilterDef(kind="address", address="downtown"))
        geocoder = FixedGeocoder({"downtown": geodetic_box(-5, -5, 105, 50)})
        got = evaluate_knot(kdef, ws, geocoder=geocoder)
        kept = [v for v in got.object_values if v is not None]
        assert len(kept) == 50

    def test_coordinate_level_filter(self, tmp_path):
        ws = workspace_with(tmp_path, [
            local_thematic("vals", [[1, 1, 0], [70, 70, 0]], [1.0, 2.0]),
            rect_layer("cells", [(0, 0, 2, 2), (69, 69, 71, 71)]),
        ])
        kdef = join_knot("k", scheme("vals", "cells", "nearest",
                                     "coordinates", "mean"))
        plain = evaluate_knot(kdef, ws)
        filtered = apply_filter(
            plain, FilterDef(kind="bounding_box",
                             bbox=geodetic_box(-5, -5, 10, 10)), ws)
        # corners of the second rectangle leave the box
        assert any(v is not None for v in filtered.coord_values[:4])
        assert all(v is None for v in filtered.coord_values[4:])


# ---------------------------------------------------------------------------
# operation knots


def constant_knot(tmp_path_ws, name, values, level="objects"):
    """Evaluated knot over the 'cells' layer with given object values."""
    layer = tmp_path_ws.load("cells")
    if level == "objects":
        coord = []
        offsets = layer.offsets
        for i, v in enumerate(values):
            coord.extend([v] * int(offsets[i + 1] - offsets[i]))
        return EvaluatedKnot(name=name, physical_layer="cells",
                             level="objects", coord_values=coord,
                             object_values=list(values))
    return EvaluatedKnot(name=name, physical_layer="cells",
                         level="coordinates", coord_values=list(values))


class TestOperationKnots:
    def make_ws(self, tmp_path, n_cells=5):
        rects = [(i * 20.0, 0.0, i * 20.0 + 10.0, 10.0)
                 for i in range(n_cells)]
        return workspace_with(tmp_path, [rect_layer("cells", rects)])

    def test_difference_with_itself_is_zero(self, tmp_path):
        ws = self.make_ws(tmp_path)
        base = constant_knot(ws, "a", [3.0, 7.5, -2.0, 0.0, 11.25])
        kdef = op_knot("diff", "x - y", inputs=("a", "a"),
                       aliases=(("x", "a"), ("y", "a")))
        got = evaluate_knot(kdef, ws, resolved={"a": base})
        assert got.object_values == [0.0] * 5

    def test_null_propagates_through_difference(self, tmp_path):
        ws = self.make_ws(tmp_path)
        a = constant_knot(ws, "a", [3.0, None, 2.0, 1.0, 0.0])
        b = constant_knot(ws, "b", [1.0, 1.0, None, 1.0, 1.0])
        kdef = op_knot("diff", "a - b", inputs=("a", "b"))
        got = evaluate_knot(kdef, ws, resolved={"a": a, "b": b})
        assert got.object_values == [2.0, None, None, 0.0, -1.0]

    def test_sidewalk_classification(self, tmp_path):
        ws = self.make_ws(tmp_path, n_cells=6)
        mats = constant_knot(ws, "mats", ["brick", "conc", "granite",
                                          "brick", "conc", "granite"])
        shade = constant_knot(ws, "shade", [0.6, 0.8, 0.9, 0.2, 0.4, 0.1])
        kdef = op_knot(
            "danger",
            "(mat == 'brick' || mat == 'conc') && shadow > 0.5 ? 0 : 1",
            inputs=("mats", "shade"),
            aliases=(("mat", "mats"), ("shadow", "shade")))
        got = evaluate_knot(kdef, ws, resolved={"mats": mats,
                                                "shade": shade})
        assert got.object_values == [0.0, 0.0, 1.0, 1.0, 1.0, 1.0]

    def test_weighted_average_identity(self, tmp_path):
        ws = self.make_ws(tmp_path)
        v = [8.0, -4.0, 12.0, 0.5, 100.0]
        names = [f"m{i}" for i in range(4)]
        resolved = {n: constant_knot(ws, n, v) for n in names}
        kdef = op_knot("avg", "(2*m0 + 3*m1 + 4*m2 + 1*m3) / 10",
                       inputs=tuple(names))
        got = evaluate_knot(kdef, ws, resolved=resolved)
        assert got.object_values == pytest.approx(v)

    def test_permuting_inputs_permutes_output(self, tmp_path):
        ws = self.make_ws(tmp_path)
        rng = np.random.default_rng(41)
        a_vals = [float(x) for x in rng.normal(size=5)]
        b_vals = [float(x) for x in rng.normal(size=5)]
        kdef = op_knot("mix", "a * 2 + b", inputs=("a", "b"))

        def run(av, bv):
            res = evaluate_knot(kdef, ws, resolved={
                "a": constant_knot(ws, "a", av),
                "b": constant_knot(ws, "b", bv)})
            return res.object_values

        base = run(a_vals, b_vals)
        perm = [3, 1, 4, 0, 2]
        shuffled = run([a_vals[p] for p in perm], [b_vals[p] for p in perm])
        assert shuffled == [base[p] for p in perm]

    def test_mixed_levels_evaluate_at_coordinates(self, tmp_path):
        ws = self.make_ws(tmp_path, n_cells=2)
        layer = ws.load("cells")
        obj_level = constant_knot(ws, "a", [10.0, 20.0])
        coord_level = constant_knot(
            ws, "b", [float(i) for i in range(layer.coordinate_count)],
            level="coordinates")
        kdef = op_knot("mix", "a + b", inputs=("a", "b"))
        got = evaluate_knot(kdef, ws, resolved={"a": obj_level,
                                                "b": coord_level})
        assert got.level == "coordinates"
        assert got.object_values is None
        want = [10.0 + i for i in range(4)] + [20.0 + i for i in range(4, 8)]
        assert got.coord_values == want

    def test_type_error_carries_element_index(self, tmp_path):
        ws = self.make_ws(tmp_path)
        a = constant_knot(ws, "a", [1.0, 1.0, "oops", 1.0, 1.0])
        kdef = op_knot("bad", "a + 1", inputs=("a",))
        with pytest.raises(KnotTypeError) as err:
            evaluate_knot(kdef, ws, resolved={"a": a})
        assert "element 2" in str(err.value)

    def test_division_by_zero_warns_and_nulls(self, tmp_path):
        ws = self.make_ws(tmp_path)
        a = constant_knot(ws, "a", [1.0, 2.0, 3.0, 4.0, 5.0])
        b = constant_knot(ws, "b", [1.0, 0.0, 2.0, 0.0, 5.0])
        warnings = []
        kdef = op_knot("ratio", "a / b", inputs=("a", "b"))
        got = evaluate_knot(kdef, ws, resolved={"a": a, "b": b},
                            warn=warnings.append)
        assert got.object_values == [1.0, None, 1.5, None, 1.0]
        assert len(warnings) == 2
        assert "element 1" in warnings[0]

    def test_missing_input_is_unresolved(self, tmp_path):
        ws = self.make_ws(tmp_path)
        kdef = op_knot("k", "a + 1", inputs=("a",))
        with pytest.raises(UnresolvedReference):
            evaluate_knot(kdef, ws, resolved={})

    def test_inputs_on_different_layers_rejected(self, tmp_path):
        rects = [(0, 0, 10, 10)]
        ws = workspace_with(tmp_path, [
            rect_layer("cells", rects),
            rect_layer("zones", rects),
        ])
        a = EvaluatedKnot(name="a", physical_layer="cells", level="objects",
                          coord_values=[1.0] * 4, object_values=[1.0])
        b = EvaluatedKnot(name="b", physical_layer="zones", level="objects",
                          coord_values=[1.0] * 4, object_values=[1.0])
        kdef = op_knot("k", "a + b", inputs=("a", "b"))
        with pytest.raises(KnotEvalError):
            evaluate_knot(kdef, ws, resolved={"a": a, "b": b})

    def test_input_name_usable_without_alias(self, tmp_path):
        ws = self.make_ws(tmp_path)
        a = constant_knot(ws, "monthly", [1.0, 2.0, 3.0, 4.0, 5.0])
        kdef = op_knot("k", "monthly * 10", inputs=("monthly",))
        got = evaluate_knot(kdef, ws, resolved={"monthly": a})
        assert got.object_values == [10.0, 20.0, 30.0, 40.0, 50.0]


# ---------------------------------------------------------------------------
# aggregation algebra


scalar_lists = st.lists(
    st.one_of(st.none(),
              st.floats(min_value=-1e6, max_value=1e6,
                        allow_nan=False, allow_infinity=False)),
    min_size=0, max_size=40)


class TestAggregationAlgebra:
    @given(scalar_lists)
    @settings(max_examples=200, deadline=None)
    def test_mean_is_sum_over_count(self, values):
        count = aggregate_values(values, "count")
        if count > 0:
            total = aggregate_values(values, "sum")
            mean = aggregate_values(values, "mean")
            assert mean == total / count

    @given(scalar_lists)
    @settings(max_examples=200, deadline=None)
    def test_min_mean_max_ordering(self, values):
        if aggregate_values(values, "count") == 0:
            assert aggregate_values(values, "mean") is None
            return
        lo = aggregate_values(values, "min")
        mid = aggregate_values(values, "mean")
        hi = aggregate_values(values, "max")
        assert lo <= mid + 1e-9
        assert mid <= hi + 1e-9

    @given(st.lists(st.one_of(st.none(), st.text(max_size=5),
                              st.floats(allow_nan=False,
                                        allow_infinity=False)),
                    max_size=20))
    @settings(max_examples=200, deadline=None)
    def test_count_is_type_agnostic_and_non_negative(self, values):
        c = aggregate_values(values, "count")
        assert c == float(sum(1 for v in values if v is not None))
        assert c >= 0.0

    def test_matches_reference_convention(self):
        values = [0.1, 0.2, None, 0.3, 0.7, None, 1e-9]
        for kind in ("sum", "mean", "min", "max", "count"):
            assert aggregate_values(values, kind) == \
                reference_aggregate(values, kind)


# ---------------------------------------------------------------------------
# plot tables


class TestPlotTables:
    def make(self, tmp_path):
        rects = [(i * 20.0, 0.0, i * 20.0 + 10.0, 10.0) for i in range(5)]
        ws = workspace_with(tmp_path, [rect_layer("cells", rects)])
        return ws, ws.load("cells")

    def test_object_rows(self, tmp_path):
        ws, layer = self.make(tmp_path)
        knot = constant_knot(ws, "k", [1.0, None, 3.0, 4.0, 5.0])
        table = plot_table(knot, layer)
        assert table.level == "objects"
        assert len(table.rows) == 5
        assert table.rows[0]["element_id"] == "cells/0"
        assert table.rows[1]["value"] is None

    def test_coordinate_rows_broadcast(self, tmp_path):
        ws, layer = self.make(tmp_path)
        knot = constant_knot(ws, "k", [1.0, 2.0, 3.0, 4.0, 5.0])
        table = plot_table(knot, layer, level="coordinates")
        assert len(table.rows) == layer.coordinate_count == 20
        assert table.rows[0]["element_id"] == "cells/0/0"
        assert table.rows[4]["object_id"] == "cells/1"
        assert table.rows[4]["value"] == 2.0

    def test_objects_request_needs_object_level(self, tmp_path):
        ws, layer = self.make(tmp_path)
        knot = constant_knot(ws, "k",
                             [float(i) for i in range(20)],
                             level="coordinates")
        with pytest.raises(LevelUnavailable):
            plot_table(knot, layer, level="objects")

    def test_element_ids_are_unique(self, tmp_path):
        ws, layer = self.make(tmp_path)
        knot = constant_knot(ws, "k", [1.0] * 5)
        for level in ("objects", "coordinates"):
            table = plot_table(knot, layer, level=level)
            ids = [r["element_id"] for r in table.rows]
            assert len(ids) == len(set(ids))

    def test_csv_shape(self, tmp_path):
        ws, layer = self.make(tmp_path)
        knot = constant_knot(ws, "k", [1.0, None, 3.0, 4.0, 5.0])
        text = plot_table(knot, layer).to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "element_id,object_id,value"
        assert lines[1] == "cells/0,cells/0,1.0"
        assert lines[2] == "cells/1,cells/1,"      # null -> empty field


# ---------------------------------------------------------------------------
# footprint slices


def octagon_building(name="towers"):
    """One mesh object with 8 mid-height points at 45-degree spacing plus
    roof/floor corners outside a narrow band at z=10.

    The 10-degree twist keeps every point well clear of sector boundaries,
    so the expected binning is robust to float rounding in the centroid."""
    ring = []
    for k in range(8):
        a = math.radians(45.0 * k + 10.0)
        ring.append([10.0 * math.cos(a), 10.0 * math.sin(a), 10.0])
    low = [[10.0, 0.0, 0.0], [0.0, 10.0, 0.0]]
    high = [[10.0, 0.0, 20.0], [0.0, 10.0, 20.0]]
    coords = np.array(ring + low + high)
    obj = PhysicalObject("t/0", coords, rings=[list(range(8))])
    return PhysicalLayer(name=name, kind="mesh3d", objects=[obj],
                         crs_origin=ORIGIN)


class TestFootprintSlice:
    def knot_for(self, layer, values):
        return EvaluatedKnot(name="k", physical_layer=layer.name,
                             level="coordinates", coord_values=list(values))

    def test_four_sectors_bin_by_azimuth(self):
        layer = octagon_building()
        values = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0,
                  99.0, 99.0, 99.0, 99.0]       # out-of-band values ignored
        table = footprint_slice(self.knot_for(layer, values), layer,
                                "t/0", slice_height=10.0, band_width=2.0,
                                n_segments=4)
        got = [r["value"] for r in table.rows]
        assert got == [0.5, 2.5, 4.5, 6.5]
        assert table.rows[0]["angle_start"] == 0.0
        assert table.rows[0]["angle_end"] == 90.0
        assert [r["sector"] for r in table.rows] == [0, 1, 2, 3]

    def test_brute_binning_comparison(self):
        rng = np.random.default_rng(53)
        n = 60
        pts = rng.uniform(-12, 12, size=(n, 2))
        coords = np.column_stack([pts, np.full(n, 10.0)])
        obj = PhysicalObject("t/0", coords, rings=[[0, 1, 2]])
        layer = PhysicalLayer(name="towers", kind="mesh3d", objects=[obj],
                              crs_origin=ORIGIN)
        values = [float(v) for v in rng.uniform(0, 5, n)]
        n_segments = 6
        table = footprint_slice(self.knot_for(layer, values), layer, "t/0",
                                slice_height=10.0, band_width=4.0,
                                n_segments=n_segments)
        cx = float(np.sum(coords[:, 0]) / n)
        cy = float(np.sum(coords[:, 1]) / n)
        width = 2 * math.pi / n_segments
        bins = [[] for _ in range(n_segments)]
        for (x, y), v in zip(pts, values):
            theta = math.atan2(y - cy, x - cx) % (2 * math.pi)
            bins[min(int(theta / width), n_segments - 1)].append(v)
        want = [float(np.sum(np.asarray(b)) / len(b)) if b else None
                for b in bins]
        assert [r["value"] for r in table.rows] == want

    def test_one_hot_quadrant(self):
        # four band points, one per quadrant, summing to an exact-zero
        # centroid; only the northern quadrant carries value 1
        coords = np.array([
            [5.0, 1.0, 10.0],    # ~11 degrees, sector 0
            [-1.0, 5.0, 10.0],   # ~101 degrees, sector 1
            [-5.0, -1.0, 10.0],  # ~191 degrees, sector 2
            [1.0, -5.0, 10.0],   # ~281 degrees, sector 3
        ])
        obj = PhysicalObject("t/0", coords, rings=[[0, 1, 2, 3]])
        layer = PhysicalLayer(name="towers", kind="mesh3d", objects=[obj],
                              crs_origin=ORIGIN)
        table = footprint_slice(
            self.knot_for(layer, [0.0, 1.0, 0.0, 0.0]), layer, "t/0",
            slice_height=10.0, band_width=2.0, n_segments=4)
        values = [r["value"] for r in table.rows]
        assert values[1] == 1.0
        assert values[0] == 0.0 and values[2] == 0.0 and values[3] == 0.0

    def test_uniform_values_everywhere(self):
        layer = octagon_building()
        table = footprint_slice(self.knot_for(layer, [4.25] * 12), layer,
                                "t/0", slice_height=10.0, band_width=2.0,
                                n_segments=4)
        assert [r["value"] for r in table.rows] == [4.25] * 4

    def test_empty_sectors_are_null(self):
        layer = octagon_building()
        table = footprint_slice(
            self.knot_for(layer, [float(i) for i in range(12)]), layer,
            "t/0", slice_height=10.0, band_width=2.0, n_segments=16)
        values = [r["value"] for r in table.rows]
        assert values.count(None) == 8
        assert len(values) == 16

    def test_band_above_roof(self):
        layer = octagon_building()
        with pytest.raises(NoSamplesInBand):
            footprint_slice(self.knot_for(layer, [0.0] * 12), layer, "t/0",
                            slice_height=100.0, band_width=2.0, n_segments=4)

    def test_unknown_object(self):
        layer = octagon_building()
        with pytest.raises(ObjectNotFound):
            footprint_slice(self.knot_for(layer, [0.0] * 12), layer,
                            "t/9", slice_height=10.0, band_width=2.0,
                            n_segments=4)

    def test_non_mesh_layer_rejected(self):
        layer = rect_layer("cells", [(0, 0, 5, 5)])
        knot = EvaluatedKnot(name="k", physical_layer="cells",
                             level="coordinates", coord_values=[0.0] * 4)
        with pytest.raises(KnotEvalError):
            footprint_slice(knot, layer, "cells/0", slice_height=0.0,
                            band_width=2.0, n_segments=4)

    def test_null_values_dropped_from_sector_mean(self):
        layer = octagon_building()
        values = [1.0, None, 2.0, None, 3.0, None, 4.0, None,
                  None, None, None, None]
        table = footprint_slice(self.knot_for(layer, values), layer, "t/0",
                                slice_height=10.0, band_width=2.0,
                                n_segments=4)
        assert [r["value"] for r in table.rows] == [1.0, 2.0, 3.0, 4.0]

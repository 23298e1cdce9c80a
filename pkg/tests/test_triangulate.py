"""Triangulation and extrusion against shoelace-area and manifold oracles."""

import math

import numpy as np
import pytest

from cityknot.geometry import normalize_rings, polygon_area
from cityknot.triangulate import (
    extrude_footprint,
    mesh_directed_edge_check,
    mesh_signed_volume,
    subdivide_mesh,
    triangle_areas,
    triangulate_polygon,
    vertex_normals,
    weld_vertices,
)
from conftest import star_polygon, star_polygon_with_hole


def triangulated_area(rings, tris) -> float:
    pts = np.vstack(rings)
    verts = np.column_stack([pts, np.zeros(len(pts))])
    return float(np.sum(triangle_areas(verts, tris)))


class TestTriangulation:
    def test_area_preserved_on_random_polygons(self, rng):
        for _ in range(60):
            rings = [star_polygon(rng)]
            tris = triangulate_polygon(rings)
            want = polygon_area(rings)
            got = triangulated_area(rings, tris)
            assert abs(got - want) <= 1e-6 * want

    def test_area_preserved_with_holes(self, rng):
        for _ in range(40):
            rings, _ = normalize_rings(star_polygon_with_hole(rng))
            tris = triangulate_polygon(rings)
            want = polygon_area(rings)
            got = triangulated_area(rings, tris)
            assert abs(got - want) <= 1e-6 * want

    def test_triangle_count_simple_polygon(self, rng):
        # A simple polygon with n vertices ear-clips into n-2 triangles.
        for _ in range(20):
            ring = star_polygon(rng)
            tris = triangulate_polygon([ring])
            assert len(tris) == len(ring) - 2

    def test_l_shape(self):
        ring = np.array([
            [0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [2.0, 2.0], [2.0, 4.0], [0.0, 4.0],
        ])
        tris = triangulate_polygon([ring])
        assert len(tris) == 4
        assert triangulated_area([ring], tris) == pytest.approx(12.0)


class TestExtrusion:
    def test_square_box(self):
        # 10 x 10 footprint, height 10: 2 roof + 2 ground + 8 wall triangles.
        ring = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
        verts, tris = extrude_footprint([ring], 10.0)
        assert len(tris) == 12
        assert mesh_directed_edge_check(tris)
        assert mesh_signed_volume(verts, tris) == pytest.approx(1000.0)

    def test_random_footprints_make_closed_outward_meshes(self, rng):
        for _ in range(30):
            rings = [star_polygon(rng)]
            h = float(rng.uniform(3, 30))
            verts, tris = extrude_footprint(rings, h)
            assert mesh_directed_edge_check(tris)
            vol = mesh_signed_volume(verts, tris)
            assert vol > 0
            assert vol == pytest.approx(polygon_area(rings) * h, rel=1e-9)

    def test_footprint_with_hole_stays_closed(self, rng):
        for _ in range(15):
            rings, _ = normalize_rings(star_polygon_with_hole(rng))
            h = 12.0
            verts, tris = extrude_footprint(rings, h)
            assert mesh_directed_edge_check(tris)
            assert mesh_signed_volume(verts, tris) == pytest.approx(
                polygon_area(rings) * h, rel=1e-9)

    def test_zero_height_rejected(self):
        ring = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(Exception):
            extrude_footprint([ring], 0.0)


class TestSubdivision:
    def test_edges_shrink_below_max(self):
        ring = np.array([[0.0, 0.0], [8.0, 0.0], [8.0, 8.0], [0.0, 8.0]])
        verts, tris = extrude_footprint([ring], 8.0)
        sv, stris = subdivide_mesh(verts, tris, max_edge=1.5)
        for a, b, c in stris:
            assert math.dist(sv[a], sv[b]) <= 1.5 + 1e-12
            assert math.dist(sv[b], sv[c]) <= 1.5 + 1e-12
            assert math.dist(sv[c], sv[a]) <= 1.5 + 1e-12
        # Surface area is preserved by midpoint splits.
        assert np.sum(triangle_areas(sv, stris)) == pytest.approx(
            np.sum(triangle_areas(verts, tris)))

    def test_shared_edge_midpoints_are_shared_vertices(self):
        # Two triangles over a unit square share the diagonal; one split
        # yields the 3x3 vertex grid (9 vertices), not 10.
        verts = np.array([
            [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0],
        ])
        tris = np.array([[0, 1, 2], [0, 2, 3]])
        sv, stris = subdivide_mesh(verts, tris, max_edge=0.9)
        assert len(stris) == 8
        assert len(sv) == 9
        # Welding at 1e-6 finds nothing further to merge.
        wv, wtris = weld_vertices(sv, stris, tol=1e-6)
        assert len(wv) == 9
        assert len(wtris) == 8

    def test_weld_merges_duplicates(self):
        verts = np.array([
            [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
            [1.0 + 1e-9, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0],
        ])
        tris = np.array([[0, 1, 2], [3, 4, 5]])
        wv, wtris = weld_vertices(verts, tris, tol=1e-6)
        assert len(wv) == 4
        assert len(wtris) == 2

    def test_subdivision_keeps_mesh_closed(self, rng):
        rings = [star_polygon(rng)]
        verts, tris = extrude_footprint(rings, 10.0)
        sv, stris = subdivide_mesh(verts, tris, max_edge=2.0)
        assert mesh_directed_edge_check(stris)
        assert mesh_signed_volume(sv, stris) == pytest.approx(
            mesh_signed_volume(verts, tris))


class TestNormals:
    def test_ground_plane_normals_point_up(self):
        verts = np.array([
            [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0],
        ])
        tris = np.array([[0, 1, 2], [0, 2, 3]])
        normals = vertex_normals(verts, tris)
        assert np.allclose(normals, [0.0, 0.0, 1.0])

    def test_box_normals_point_outward(self):
        ring = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
        verts, tris = extrude_footprint([ring], 10.0)
        normals = vertex_normals(verts, tris)
        center = verts.mean(axis=0)
        outward = verts - center
        dots = np.einsum("ij,ij->i", normals, outward)
        assert (dots > 0).all()

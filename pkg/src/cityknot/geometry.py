"""Planar geometry for workspace-local layers.

All coordinates here are workspace-local meters in a tangent frame anchored
at a geodetic origin.  Polygons are lists of rings, each ring an (n, 2)
float64 array; the exterior ring comes first with counterclockwise winding,
holes follow clockwise, and the first vertex is not repeated at the end.
Region boundaries are closed: a point on an edge counts as inside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


class GeometryError(ValueError):
    pass


class UnsupportedKindPair(GeometryError):
    """Raised for relation queries between unsupported geometry kinds."""


@dataclass(frozen=True)
class LocalFrame:
    """Equirectangular tangent frame anchored at (lat0, lon0) degrees.

    x grows east, y grows north, z is height in meters.  Inverse of
    ``project`` recovers geodetic coordinates to well under 1e-9 degrees.
    """

    lat0: float
    lon0: float

    def __post_init__(self):
        if abs(math.cos(math.radians(self.lat0))) < 1e-12:
            raise GeometryError("frame origin too close to a pole")

    @property
    def _kx(self) -> float:
        return EARTH_RADIUS_M * math.cos(math.radians(self.lat0)) * math.pi / 180.0

    @property
    def _ky(self) -> float:
        return EARTH_RADIUS_M * math.pi / 180.0

    def project(self, lat, lon, height=0.0):
        """Geodetic degrees (+ meters height) to local (x, y, z) meters."""
        lat = np.asarray(lat, dtype=np.float64)
        lon = np.asarray(lon, dtype=np.float64)
        height = np.asarray(height, dtype=np.float64)
        x = (lon - self.lon0) * self._kx
        y = (lat - self.lat0) * self._ky
        z = np.broadcast_to(height, x.shape).astype(np.float64, copy=True)
        return x, y, z

    def unproject(self, x, y, z=0.0):
        """Local (x, y, z) meters back to (lat, lon, height)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        lon = x / self._kx + self.lon0
        lat = y / self._ky + self.lat0
        return lat, lon, np.broadcast_to(z, x.shape).astype(np.float64, copy=True)

    def project_points(self, geodetic: np.ndarray) -> np.ndarray:
        """(n, 3) rows of (lat, lon, height) to (n, 3) local meters."""
        g = np.asarray(geodetic, dtype=np.float64).reshape(-1, 3)
        x, y, z = self.project(g[:, 0], g[:, 1], g[:, 2])
        return np.column_stack([x, y, z])

    def unproject_points(self, local: np.ndarray) -> np.ndarray:
        p = np.asarray(local, dtype=np.float64).reshape(-1, 3)
        lat, lon, h = self.unproject(p[:, 0], p[:, 1], p[:, 2])
        return np.column_stack([lat, lon, h])


# ---------------------------------------------------------------------------
# rings


def ring_signed_area(ring: np.ndarray) -> float:
    """Shoelace signed area; positive for counterclockwise winding."""
    r = np.asarray(ring, dtype=np.float64)
    x, y = r[:, 0], r[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_area(rings) -> float:
    """Area of exterior minus holes, by winding-signed shoelace sums."""
    return abs(sum(ring_signed_area(r) for r in rings))


def normalize_rings(rings):
    """Enforce CCW exterior / CW holes and drop a repeated closing vertex.

    Returns (rings, fixed) where fixed is True when any ring was rewound or
    trimmed; callers use that to emit a diagnostic rather than fail.
    """
    fixed = False
    out = []
    for i, ring in enumerate(rings):
        r = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
        if len(r) >= 2 and np.array_equal(r[0], r[-1]):
            r = r[:-1]
            fixed = True
        if len(r) < 3:
            raise GeometryError("ring with fewer than 3 distinct vertices")
        area = ring_signed_area(r)
        want_ccw = i == 0
        if (area > 0) != want_ccw and area != 0:
            r = r[::-1].copy()
            fixed = True
        out.append(np.ascontiguousarray(r))
    return out, fixed


def rings_bbox(rings) -> tuple[float, float, float, float]:
    pts = np.vstack(rings)
    return (
        float(pts[:, 0].min()),
        float(pts[:, 1].min()),
        float(pts[:, 0].max()),
        float(pts[:, 1].max()),
    )


def polygon_centroid(rings) -> tuple[float, float]:
    """Area-weighted centroid; falls back to the vertex mean when degenerate."""
    a_total = 0.0
    cx = 0.0
    cy = 0.0
    for ring in rings:
        r = np.asarray(ring, dtype=np.float64)
        x, y = r[:, 0], r[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = 0.5 * float(np.sum(cross))
        a_total += a
        cx += float(np.sum((x + xn) * cross)) / 6.0
        cy += float(np.sum((y + yn) * cross)) / 6.0
    if abs(a_total) < 1e-12:
        pts = np.vstack(rings)
        return float(pts[:, 0].mean()), float(pts[:, 1].mean())
    return cx / a_total, cy / a_total


# ---------------------------------------------------------------------------
# point in polygon


def points_on_ring_edges(px, py, ring) -> np.ndarray:
    """Boolean mask of points lying exactly on a ring's edges."""
    ax, ay = ring[:, 0], ring[:, 1]
    bx, by = np.roll(ax, -1), np.roll(ay, -1)
    on = np.zeros(px.shape, dtype=bool)
    for j in range(len(ring)):
        cross = (bx[j] - ax[j]) * (py - ay[j]) - (by[j] - ay[j]) * (px - ax[j])
        inx = (px >= min(ax[j], bx[j])) & (px <= max(ax[j], bx[j]))
        iny = (py >= min(ay[j], by[j])) & (py <= max(ay[j], by[j]))
        on |= (cross == 0.0) & inx & iny
    return on


def point_in_polygon(points: np.ndarray, rings) -> np.ndarray:
    """Closed-region membership test for (n, 2) points.

    Even-odd crossing parity over all rings, so holes are handled by the
    winding-free parity itself; points exactly on any edge count as inside.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    px, py = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    boundary = np.zeros(len(pts), dtype=bool)
    for ring in rings:
        r = np.asarray(ring, dtype=np.float64)
        ax, ay = r[:, 0], r[:, 1]
        bx, by = np.roll(ax, -1), np.roll(ay, -1)
        for j in range(len(r)):
            crosses = (ay[j] > py) != (by[j] > py)
            if not crosses.any():
                continue
            t = (py - ay[j]) / (by[j] - ay[j])
            xhit = ax[j] + t * (bx[j] - ax[j])
            inside ^= crosses & (px < xhit)
        boundary |= points_on_ring_edges(px, py, r)
    return inside | boundary


# ---------------------------------------------------------------------------
# segments


def orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment_collinear(ax, ay, bx, by, px, py) -> bool:
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def segments_intersect(a, b, c, d) -> bool:
    """True when closed segments ab and cd share any point."""
    o1 = orient(a[0], a[1], b[0], b[1], c[0], c[1])
    o2 = orient(a[0], a[1], b[0], b[1], d[0], d[1])
    o3 = orient(c[0], c[1], d[0], d[1], a[0], a[1])
    o4 = orient(c[0], c[1], d[0], d[1], b[0], b[1])
    if ((o1 > 0) != (o2 > 0) and o1 != 0 and o2 != 0
            and (o3 > 0) != (o4 > 0) and o3 != 0 and o4 != 0):
        return True
    if o1 == 0 and _on_segment_collinear(a[0], a[1], b[0], b[1], c[0], c[1]):
        return True
    if o2 == 0 and _on_segment_collinear(a[0], a[1], b[0], b[1], d[0], d[1]):
        return True
    if o3 == 0 and _on_segment_collinear(c[0], c[1], d[0], d[1], a[0], a[1]):
        return True
    if o4 == 0 and _on_segment_collinear(c[0], c[1], d[0], d[1], b[0], b[1]):
        return True
    return False


def segments_properly_cross(a, b, c, d) -> bool:
    """Transversal interior crossing; endpoint touches and overlaps excluded."""
    o1 = orient(a[0], a[1], b[0], b[1], c[0], c[1])
    o2 = orient(a[0], a[1], b[0], b[1], d[0], d[1])
    o3 = orient(c[0], c[1], d[0], d[1], a[0], a[1])
    o4 = orient(c[0], c[1], d[0], d[1], b[0], b[1])
    return o1 * o2 < 0 and o3 * o4 < 0


def _ring_edges(rings):
    for ring in rings:
        r = np.asarray(ring, dtype=np.float64)
        for j in range(len(r)):
            yield r[j], r[(j + 1) % len(r)]


def point_segment_d2(px, py, ax, ay, bx, by):
    """Squared point-to-segment distance; broadcasts over points or edges."""
    dx, dy = bx - ax, by - ay
    len2 = dx * dx + dy * dy
    nonzero = np.asarray(len2) > 0.0
    safe = np.where(nonzero, len2, 1.0)
    t = ((px - ax) * dx + (py - ay) * dy) / safe
    t = np.clip(np.where(nonzero, t, 0.0), 0.0, 1.0)
    ex = px - (ax + t * dx)
    ey = py - (ay + t * dy)
    return ex * ex + ey * ey


def point_polygon_d2(px: float, py: float, rings) -> float:
    """Squared 2D distance to a closed polygon region; 0 when inside."""
    if bool(point_in_polygon(np.array([[px, py]]), rings)[0]):
        return 0.0
    best = math.inf
    for ring in rings:
        r = np.asarray(ring, dtype=np.float64)
        ax, ay = r[:, 0], r[:, 1]
        bx, by = np.roll(ax, -1), np.roll(ay, -1)
        d2 = point_segment_d2(px, py, ax, ay, bx, by)
        m = float(np.min(d2))
        if m < best:
            best = m
    return best


# ---------------------------------------------------------------------------
# polygon-polygon relations


def _any_vertex_inside(rings_src, rings_dst) -> bool:
    for ring in rings_src:
        if point_in_polygon(ring, rings_dst).any():
            return True
    return False


def _vertices_strictly_inside(rings_src, rings_dst) -> bool:
    for ring in rings_src:
        r = np.asarray(ring, dtype=np.float64)
        inside = point_in_polygon(r, rings_dst)
        if not inside.any():
            continue
        on = np.zeros(len(r), dtype=bool)
        for dring in rings_dst:
            on |= points_on_ring_edges(r[:, 0], r[:, 1], np.asarray(dring))
        if (inside & ~on).any():
            return True
    return False


def polygons_intersect(a_rings, b_rings) -> bool:
    ab, bb = rings_bbox(a_rings), rings_bbox(b_rings)
    if ab[2] < bb[0] or bb[2] < ab[0] or ab[3] < bb[1] or bb[3] < ab[1]:
        return False
    if _any_vertex_inside(b_rings, a_rings) or _any_vertex_inside(a_rings, b_rings):
        return True
    edges_b = list(_ring_edges(b_rings))
    for pa, pb in _ring_edges(a_rings):
        for pc, pd in edges_b:
            if segments_intersect(pa, pb, pc, pd):
                return True
    return False


def polygon_contains_polygon(a_rings, b_rings) -> bool:
    """Closed containment: every point of b lies in the closed region a.

    Decided by vertex membership plus the absence of proper boundary
    crossings; midpoint samples and hole-vertex checks guard the common
    degenerate layouts (b spanning a concavity or covering a hole of a).
    """
    ab, bb = rings_bbox(a_rings), rings_bbox(b_rings)
    if bb[0] < ab[0] or bb[1] < ab[1] or bb[2] > ab[2] or bb[3] > ab[3]:
        return False
    for ring in b_rings:
        r = np.asarray(ring, dtype=np.float64)
        if not point_in_polygon(r, a_rings).all():
            return False
        mids = 0.5 * (r + np.roll(r, -1, axis=0))
        if not point_in_polygon(mids, a_rings).all():
            return False
    edges_a = list(_ring_edges(a_rings))
    for pc, pd in _ring_edges(b_rings):
        for pa, pb in edges_a:
            if segments_properly_cross(pa, pb, pc, pd):
                return False
    for hole in a_rings[1:]:
        if _vertices_strictly_inside([hole], b_rings):
            return False
    return True


def relate(a_rings, b_rings, relation: str) -> bool:
    """Closed-region predicate between two polygons.

    contains: b inside a.  within: a inside b.  intersects: any shared point.
    """
    if relation == "intersects":
        return polygons_intersect(a_rings, b_rings)
    if relation == "contains":
        return polygon_contains_polygon(a_rings, b_rings)
    if relation == "within":
        return polygon_contains_polygon(b_rings, a_rings)
    raise GeometryError(f"unknown relation {relation!r}")


# ---------------------------------------------------------------------------
# nearest


def nearest_coordinates(queries: np.ndarray, targets: np.ndarray,
                        chunk: int = 512) -> np.ndarray:
    """Index of the nearest target per query point, 3D distance.

    Ties resolve to the lowest target index (argmin keeps the first hit).
    """
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(t) == 0:
        raise GeometryError("nearest query against an empty target set")
    out = np.empty(len(q), dtype=np.int64)
    for s in range(0, len(q), chunk):
        block = q[s:s + chunk]
        dx = block[:, 0:1] - t[None, :, 0]
        dy = block[:, 1:2] - t[None, :, 1]
        dz = block[:, 2:3] - t[None, :, 2]
        d2 = dx * dx + dy * dy + dz * dz
        out[s:s + chunk] = np.argmin(d2, axis=1)
    return out


@dataclass
class FootprintSet:
    """Object footprints prepared for nearest queries.

    Pruning uses centroid distance minus a per-object bounding radius as a
    lower bound on the true footprint distance, so results match an
    exhaustive scan exactly (same distance primitive, superset of candidates).
    """

    footprints: list
    centroids: np.ndarray = field(init=False)
    radii: np.ndarray = field(init=False)

    def __post_init__(self):
        cents = []
        radii = []
        for rings in self.footprints:
            cx, cy = polygon_centroid(rings)
            pts = np.vstack(rings)
            d = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
            cents.append((cx, cy))
            radii.append(float(d.max()) if len(d) else 0.0)
        self.centroids = np.asarray(cents, dtype=np.float64).reshape(-1, 2)
        self.radii = np.asarray(radii, dtype=np.float64)

    def nearest(self, queries: np.ndarray) -> np.ndarray:
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim == 1:
            q = q.reshape(1, -1)
        if len(self.footprints) == 0:
            raise GeometryError("nearest query against an empty object set")
        out = np.empty(len(q), dtype=np.int64)
        for i in range(len(q)):
            px, py = float(q[i, 0]), float(q[i, 1])
            cd = np.hypot(self.centroids[:, 0] - px, self.centroids[:, 1] - py)
            lb = np.maximum(cd - self.radii, 0.0)
            order = np.argsort(lb, kind="stable")
            best_d2 = math.inf
            best_idx = -1
            for j in order:
                if lb[j] * lb[j] > best_d2:
                    break
                d2 = point_polygon_d2(px, py, self.footprints[j])
                if d2 < best_d2 or (d2 == best_d2 and j < best_idx):
                    best_d2, best_idx = d2, int(j)
            out[i] = best_idx
        return out


# ---------------------------------------------------------------------------
# uniform grid index


def _cell_key_bounds(cells: dict) -> tuple | None:
    """((min_ix, min_iy), (max_ix, max_iy)) over occupied grid cells."""
    if not cells:
        return None
    xs = [k[0] for k in cells]
    ys = [k[1] for k in cells]
    return (min(xs), min(ys)), (max(xs), max(ys))


class PointGridIndex:
    """Uniform grid over 2D points for candidate lookups by box."""

    def __init__(self, points: np.ndarray, cell_size: float | None = None):
        pts = np.asarray(points, dtype=np.float64)
        self.points = pts[:, :2] if pts.shape[1] > 2 else pts
        n = max(len(self.points), 1)
        if cell_size is None:
            if len(self.points):
                span = max(
                    float(np.ptp(self.points[:, 0])),
                    float(np.ptp(self.points[:, 1])),
                    1e-9,
                )
            else:
                span = 1.0
            cell_size = max(span / max(math.sqrt(n), 1.0), 1e-9)
        self.cell = float(cell_size)
        self._cells: dict[tuple[int, int], list[int]] = {}
        for i, (x, y) in enumerate(self.points):
            key = (int(math.floor(x / self.cell)), int(math.floor(y / self.cell)))
            self._cells.setdefault(key, []).append(i)
        self._key_bounds = _cell_key_bounds(self._cells)

    def query_box(self, xmin, ymin, xmax, ymax) -> np.ndarray:
        """Indices of points inside the closed box; exact, not a superset."""
        if self._key_bounds is None:
            return np.empty(0, dtype=np.int64)
        # clamping to occupied cells keeps the scan bounded however large
        # the query box is relative to the cell size
        (bx0, by0), (bx1, by1) = self._key_bounds
        ix0 = max(int(math.floor(xmin / self.cell)), bx0)
        ix1 = min(int(math.floor(xmax / self.cell)), bx1)
        iy0 = max(int(math.floor(ymin / self.cell)), by0)
        iy1 = min(int(math.floor(ymax / self.cell)), by1)
        found: list[int] = []
        for ix in range(ix0, ix1 + 1):
            for iy in range(iy0, iy1 + 1):
                found.extend(self._cells.get((ix, iy), ()))
        if not found:
            return np.empty(0, dtype=np.int64)
        idx = np.asarray(sorted(found), dtype=np.int64)
        p = self.points[idx]
        keep = (p[:, 0] >= xmin) & (p[:, 0] <= xmax) & (p[:, 1] >= ymin) & (p[:, 1] <= ymax)
        return idx[keep]


class BoxGridIndex:
    """Uniform grid over item bounding boxes; queries return supersets."""

    def __init__(self, bboxes, cell_size: float | None = None):
        self.bboxes = [tuple(map(float, b)) for b in bboxes]
        if cell_size is None:
            if self.bboxes:
                w = np.array([b[2] - b[0] for b in self.bboxes])
                h = np.array([b[3] - b[1] for b in self.bboxes])
                extents = np.maximum(w, h)
                # the max-extent floor bounds any single box's insertion
                # span to 65x65 cells even when sizes are wildly skewed
                cell_size = max(float(np.median(extents)) * 2.0,
                                float(np.max(extents)) / 64.0, 1e-9)
            else:
                cell_size = 1.0
        self.cell = float(cell_size)
        self._cells: dict[tuple[int, int], list[int]] = {}
        for i, (x0, y0, x1, y1) in enumerate(self.bboxes):
            for ix in range(int(math.floor(x0 / self.cell)), int(math.floor(x1 / self.cell)) + 1):
                for iy in range(int(math.floor(y0 / self.cell)), int(math.floor(y1 / self.cell)) + 1):
                    self._cells.setdefault((ix, iy), []).append(i)
        self._key_bounds = _cell_key_bounds(self._cells)

    def query_point(self, x: float, y: float) -> list[int]:
        key = (int(math.floor(x / self.cell)), int(math.floor(y / self.cell)))
        out = []
        for i in self._cells.get(key, ()):
            b = self.bboxes[i]
            if b[0] <= x <= b[2] and b[1] <= y <= b[3]:
                out.append(i)
        return out

    def query_box(self, xmin, ymin, xmax, ymax) -> list[int]:
        if self._key_bounds is None:
            return []
        (bx0, by0), (bx1, by1) = self._key_bounds
        seen: set[int] = set()
        for ix in range(max(int(math.floor(xmin / self.cell)), bx0),
                        min(int(math.floor(xmax / self.cell)), bx1) + 1):
            for iy in range(max(int(math.floor(ymin / self.cell)), by0),
                            min(int(math.floor(ymax / self.cell)), by1) + 1):
                seen.update(self._cells.get((ix, iy), ()))
        out = []
        for i in sorted(seen):
            b = self.bboxes[i]
            if not (b[2] < xmin or xmax < b[0] or b[3] < ymin or ymax < b[1]):
                out.append(i)
        return out


# ---------------------------------------------------------------------------
# clipping (ingest support)


def clip_polygon_to_box(ring: np.ndarray, xmin, ymin, xmax, ymax) -> np.ndarray:
    """Sutherland-Hodgman clip of one ring against an axis-aligned box."""
    def clip_edge(poly, inside, intersect):
        out = []
        n = len(poly)
        for i in range(n):
            cur, nxt = poly[i], poly[(i + 1) % n]
            cin, nin = inside(cur), inside(nxt)
            if cin:
                out.append(cur)
                if not nin:
                    out.append(intersect(cur, nxt))
            elif nin:
                out.append(intersect(cur, nxt))
        return out

    def x_cut(x):
        def f(a, b):
            t = (x - a[0]) / (b[0] - a[0])
            return (x, a[1] + t * (b[1] - a[1]))
        return f

    def y_cut(y):
        def f(a, b):
            t = (y - a[1]) / (b[1] - a[1])
            return (a[0] + t * (b[0] - a[0]), y)
        return f

    poly = [tuple(p) for p in np.asarray(ring, dtype=np.float64)]
    for inside, cut in (
        (lambda p: p[0] >= xmin, x_cut(xmin)),
        (lambda p: p[0] <= xmax, x_cut(xmax)),
        (lambda p: p[1] >= ymin, y_cut(ymin)),
        (lambda p: p[1] <= ymax, y_cut(ymax)),
    ):
        if not poly:
            break
        poly = clip_edge(poly, inside, cut)
    return np.asarray(poly, dtype=np.float64).reshape(-1, 2)


def clip_segment_to_box(a, b, xmin, ymin, xmax, ymax):
    """Liang-Barsky; returns the clipped (a, b) pair or None when outside."""
    x0, y0 = float(a[0]), float(a[1])
    dx, dy = float(b[0]) - x0, float(b[1]) - y0
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, x0 - xmin), (dx, xmax - x0),
        (-dy, y0 - ymin), (dy, ymax - y0),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            if r > t0:
                t0 = r
        else:
            if r < t0:
                return None
            if r < t1:
                t1 = r
    return (
        (x0 + t0 * dx, y0 + t0 * dy),
        (x0 + t1 * dx, y0 + t1 * dy),
    )

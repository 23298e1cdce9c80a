"""Footprint triangulation and extrusion into closed meshes.

Ear clipping over vertex indices, with holes spliced into the exterior ring
by max-x bridges, so output triangles always reference the original vertex
array.  Extrusion produces watertight meshes: every directed edge appears
exactly once, signed volume is positive.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import GeometryError, orient, ring_signed_area


def _point_in_triangle(px, py, ax, ay, bx, by, cx, cy) -> bool:
    # Inclusive: boundary points count as inside (blocks unsafe ears).
    d1 = orient(ax, ay, bx, by, px, py)
    d2 = orient(bx, by, cx, cy, px, py)
    d3 = orient(cx, cy, ax, ay, px, py)
    has_neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    has_pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    return not (has_neg and has_pos)


def _bridge_hole(outer: list[int], hole: list[int], pts: np.ndarray) -> list[int]:
    """Splice a hole's index loop into the outer loop via a max-x bridge."""
    hx = pts[hole, 0]
    m_pos = int(np.argmax(hx))
    m = hole[m_pos]
    mx, my = pts[m, 0], pts[m, 1]

    # Closest intersection of the +x ray from m with outer edges.
    best_t = math.inf
    best_edge = -1
    n = len(outer)
    for i in range(n):
        a, b = outer[i], outer[(i + 1) % n]
        ay, by = pts[a, 1], pts[b, 1]
        if (ay > my) == (by > my):
            continue
        t = pts[a, 0] + (my - ay) / (by - ay) * (pts[b, 0] - pts[a, 0])
        if t >= mx and t < best_t:
            best_t = t
            best_edge = i
    if best_edge < 0:
        raise GeometryError("hole outside exterior ring")

    a, b = outer[best_edge], outer[(best_edge + 1) % n]
    p = a if pts[a, 0] > pts[b, 0] else b
    # Reflex outer vertices inside triangle (m, intersection, p) block the
    # direct bridge; connect to the one with the smallest angle from +x.
    ix, iy = best_t, my
    candidate = p
    best_metric = math.inf
    for i in range(n):
        v = outer[i]
        if v in (a, b):
            continue
        vx, vy = pts[v, 0], pts[v, 1]
        prev_v, next_v = outer[i - 1], outer[(i + 1) % n]
        reflex = orient(pts[prev_v, 0], pts[prev_v, 1], vx, vy,
                        pts[next_v, 0], pts[next_v, 1]) < 0
        if not reflex:
            continue
        lo_x = min(mx, ix)
        if vx < lo_x:
            continue
        if not _point_in_triangle(vx, vy, mx, my, ix, iy, pts[p, 0], pts[p, 1]):
            continue
        dx, dy = vx - mx, vy - my
        metric = abs(dy) / max(math.hypot(dx, dy), 1e-30)
        if metric < best_metric:
            best_metric = metric
            candidate = v
    bridge = candidate

    pos = outer.index(bridge)
    rotated_hole = hole[m_pos:] + hole[:m_pos]
    return outer[:pos + 1] + rotated_hole + [m, bridge] + outer[pos + 1:]


def triangulate_polygon(rings) -> np.ndarray:
    """Ear-clip a polygon with holes into (m, 3) CCW vertex-index triples.

    Vertex indices address the concatenation of all rings in order.  Rings
    must arrive normalized (CCW exterior, CW holes, open).
    """
    pts = np.vstack([np.asarray(r, dtype=np.float64) for r in rings])
    offsets = np.cumsum([0] + [len(r) for r in rings])
    loop = list(range(offsets[0], offsets[1]))
    holes = [list(range(offsets[i], offsets[i + 1])) for i in range(1, len(rings))]
    holes.sort(key=lambda h: -float(np.max(pts[h, 0])))
    for hole in holes:
        loop = _bridge_hole(loop, hole, pts)

    triangles: list[tuple[int, int, int]] = []
    guard = 0
    limit = 4 * max(len(loop), 1) ** 2
    while len(loop) > 3:
        guard += 1
        if guard > limit:
            raise GeometryError("triangulation failed to converge")
        n = len(loop)
        clipped = False
        for i in range(n):
            ia, ib, ic = loop[i - 1], loop[i], loop[(i + 1) % n]
            ax, ay = pts[ia]
            bx, by = pts[ib]
            cx, cy = pts[ic]
            cross = orient(ax, ay, bx, by, cx, cy)
            if cross <= 0:
                continue
            ear = True
            for j in loop:
                if j in (ia, ib, ic):
                    continue
                jx, jy = pts[j]
                if (jx == ax and jy == ay) or (jx == bx and jy == by) or (jx == cx and jy == cy):
                    continue
                if _point_in_triangle(jx, jy, ax, ay, bx, by, cx, cy):
                    ear = False
                    break
            if ear:
                triangles.append((ia, ib, ic))
                del loop[i]
                clipped = True
                break
        if not clipped:
            # Degenerate remainder: drop the flattest corner and continue.
            flattest = min(
                range(n),
                key=lambda i: abs(orient(*pts[loop[i - 1]], *pts[loop[i]],
                                         *pts[loop[(i + 1) % n]])),
            )
            del loop[flattest]
    if len(loop) == 3:
        ia, ib, ic = loop
        if orient(*pts[ia], *pts[ib], *pts[ic]) != 0:
            triangles.append((ia, ib, ic))
    return np.asarray(triangles, dtype=np.int32).reshape(-1, 3)


def extrude_footprint(rings, height: float):
    """Extrude a normalized footprint into a closed mesh.

    Returns (vertices (n, 3), triangles (m, 3)).  Vertex layout: all ring
    vertices at z=0 first, the same vertices at z=height after, so footprint
    ring indices address the base vertices directly.
    """
    if height <= 0:
        raise GeometryError("extrusion height must be positive")
    flat = np.vstack([np.asarray(r, dtype=np.float64) for r in rings])
    n = len(flat)
    vertices = np.zeros((2 * n, 3), dtype=np.float64)
    vertices[:n, :2] = flat
    vertices[n:, :2] = flat
    vertices[n:, 2] = height

    roof = triangulate_polygon(rings)
    top = roof + n
    bottom = roof[:, ::-1]

    walls = []
    offset = 0
    for ring in rings:
        k = len(ring)
        for i in range(k):
            a = offset + i
            b = offset + (i + 1) % k
            walls.append((a, b, b + n))
            walls.append((a, b + n, a + n))
        offset += k
    tris = np.vstack([
        bottom,
        top,
        np.asarray(walls, dtype=np.int32).reshape(-1, 3),
    ]).astype(np.int32)
    return vertices, tris


def mesh_directed_edge_check(triangles: np.ndarray) -> bool:
    """True when every directed edge appears exactly once.

    That single property implies the mesh is closed (each undirected edge is
    shared by exactly two triangles) and consistently oriented.
    """
    seen: set[tuple[int, int]] = set()
    for a, b, c in np.asarray(triangles, dtype=np.int64):
        for e in ((a, b), (b, c), (c, a)):
            if e in seen:
                return False
            seen.add(e)
    return all((b, a) in seen for a, b in seen)


def mesh_signed_volume(vertices: np.ndarray, triangles: np.ndarray) -> float:
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return float(np.sum(np.einsum("ij,ij->i", p0, np.cross(p1, p2))) / 6.0)


def subdivide_mesh(vertices: np.ndarray, triangles: np.ndarray, max_edge: float):
    """Midpoint 4-split until no edge exceeds max_edge.

    Midpoints are keyed by the undirected parent edge, so neighboring
    triangles share the new vertex and the surface stays welded.
    """
    if max_edge <= 0:
        raise GeometryError("max_edge must be positive")
    verts = [tuple(map(float, v)) for v in np.asarray(vertices, dtype=np.float64)]
    tris = [tuple(map(int, t)) for t in np.asarray(triangles, dtype=np.int64)]
    midpoint: dict[tuple[int, int], int] = {}

    def mid(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        found = midpoint.get(key)
        if found is not None:
            return found
        va, vb = verts[a], verts[b]
        verts.append(((va[0] + vb[0]) / 2.0, (va[1] + vb[1]) / 2.0, (va[2] + vb[2]) / 2.0))
        midpoint[key] = len(verts) - 1
        return midpoint[key]

    def too_long(a: int, b: int) -> bool:
        va, vb = verts[a], verts[b]
        return math.dist(va, vb) > max_edge

    pending = tris
    out: list[tuple[int, int, int]] = []
    while pending:
        nxt: list[tuple[int, int, int]] = []
        for a, b, c in pending:
            if too_long(a, b) or too_long(b, c) or too_long(c, a):
                ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
                nxt.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
            else:
                out.append((a, b, c))
        pending = nxt
    return (
        np.asarray(verts, dtype=np.float64).reshape(-1, 3),
        np.asarray(out, dtype=np.int64).reshape(-1, 3),
    )


def weld_vertices(vertices: np.ndarray, triangles: np.ndarray, tol: float = 1e-6):
    """Merge vertices closer than tol and drop degenerate triangles."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    remap = np.arange(len(v), dtype=np.int64)
    inv = 1.0 / tol
    for i, p in enumerate(v):
        base = (math.floor(p[0] * inv), math.floor(p[1] * inv), math.floor(p[2] * inv))
        target = -1
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    for j in buckets.get((base[0] + dx, base[1] + dy, base[2] + dz), ()):
                        if abs(v[j, 0] - p[0]) <= tol and abs(v[j, 1] - p[1]) <= tol \
                                and abs(v[j, 2] - p[2]) <= tol:
                            target = j
                            break
                    if target >= 0:
                        break
                if target >= 0:
                    break
            if target >= 0:
                break
        if target >= 0:
            remap[i] = target
        else:
            buckets.setdefault(base, []).append(i)
    used = np.unique(remap)
    compact = np.full(len(v), -1, dtype=np.int64)
    compact[used] = np.arange(len(used))
    new_tris = compact[remap[t]]
    keep = (
        (new_tris[:, 0] != new_tris[:, 1])
        & (new_tris[:, 1] != new_tris[:, 2])
        & (new_tris[:, 2] != new_tris[:, 0])
    )
    return v[used], new_tris[keep]


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    c = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    if c.ndim == 1:  # 2D input
        return 0.5 * np.abs(c)
    return 0.5 * np.linalg.norm(c, axis=1)


def vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted outward vertex normals; zero-sum vertices fall back to
    the first adjacent face normal."""
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    face = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, t[:, k], face)
    norms = np.linalg.norm(acc, axis=1)
    bad = norms < 1e-12
    if bad.any():
        unit_face = face / np.maximum(np.linalg.norm(face, axis=1, keepdims=True), 1e-30)
        first_face = np.zeros_like(v)
        seen = np.zeros(len(v), dtype=bool)
        for fi, tri in enumerate(t):
            for vi in tri:
                if not seen[vi]:
                    first_face[vi] = unit_face[fi]
                    seen[vi] = True
        acc[bad] = first_face[bad]
        norms = np.linalg.norm(acc, axis=1)
    return acc / np.maximum(norms[:, None], 1e-30)

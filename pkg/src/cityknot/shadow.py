"""Shadow accumulation: BVH-accelerated any-hit ray casting over a sun path.

For every surface sample and every above-horizon instant, a ray leaves the
sample (offset along its normal to avoid self-hits) toward the sun.  A hit
anywhere in the scene, or a sun direction behind the surface, marks that
instant shadowed.  The output is the shadowed share of above-horizon
instants, as a thematic layer over the sample points.

The ray kernels live in this file because the JIT disk cache only works for
functions defined in a real module.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import timedelta

import numba
import numpy as np

from .ingest import SurfaceSamples
from .layers import PhysicalLayer, ThematicLayer
from .solar import EmptyPath, SunPath

LEAF_SIZE = 8
# Node boxes are padded so the slab test can never round a genuine surface
# hit out of its leaf; correctness never depends on boxes being tight.
BOX_PAD = 1e-6
NORMAL_OFFSET = 1e-3   # meters along the sample normal


class EmptyScene(ValueError):
    """Scene has no triangles to cast against."""


@dataclass(frozen=True)
class Bvh:
    """Flattened median-split bounding volume hierarchy.

    Internal nodes have node_count == 0 and children in node_left/right;
    leaves have node_count > 0 triangles starting at node_start in the
    reordered triangle array.
    """

    node_min: np.ndarray    # (k, 3) padded box corners
    node_max: np.ndarray    # (k, 3)
    node_left: np.ndarray   # (k,) child node id, -1 for leaves
    node_right: np.ndarray  # (k,)
    node_start: np.ndarray  # (k,) first triangle of a leaf
    node_count: np.ndarray  # (k,) leaf triangle count, 0 for internal
    triangles: np.ndarray   # (m, 3, 3) vertex positions, leaf order

    def __len__(self) -> int:
        return self.triangles.shape[0]

    def any_hit(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Per ray: does any triangle intersect at t > 0?"""
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        directions = np.ascontiguousarray(directions, dtype=np.float64)
        if origins.shape != directions.shape or origins.ndim != 2 \
                or origins.shape[1] != 3:
            raise ValueError("origins and directions must both be (n, 3)")
        return _any_hit_batch(origins, directions,
                              self.node_min, self.node_max,
                              self.node_left, self.node_right,
                              self.node_start, self.node_count,
                              self.triangles)


def scene_triangles(scene) -> np.ndarray:
    """Collect an (m, 3, 3) triangle array from mesh3d layers.

    Accepts a PhysicalLayer, an iterable of them, or a ready-made array.
    """
    if isinstance(scene, np.ndarray):
        tris = np.ascontiguousarray(scene, dtype=np.float64)
        if tris.ndim != 3 or tris.shape[1:] != (3, 3):
            raise ValueError("triangle array must have shape (m, 3, 3)")
        return tris
    if isinstance(scene, PhysicalLayer):
        scene = [scene]
    parts = []
    for layer in scene:
        if layer.kind != "mesh3d":
            raise ValueError(
                f"layer {layer.name!r} is {layer.kind}, not mesh3d")
        for obj in layer.objects:
            if obj.indices is None or not len(obj.indices):
                continue
            parts.append(obj.coordinates[obj.indices])
    if not parts:
        return np.zeros((0, 3, 3))
    return np.ascontiguousarray(np.concatenate(parts), dtype=np.float64)


def build_bvh(scene, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Median-split BVH over the triangles of one or more mesh3d layers."""
    tris = scene_triangles(scene)
    m = tris.shape[0]
    if m == 0:
        raise EmptyScene("scene has no triangles")
    if leaf_size < 1:
        raise ValueError("leaf_size must be at least 1")

    lo = tris.min(axis=1)
    hi = tris.max(axis=1)
    centers = (lo + hi) * 0.5
    order = np.arange(m)

    node_min, node_max = [], []
    node_left, node_right = [], []
    node_start, node_count = [], []

    def alloc(start, end):
        idx = order[start:end]
        node_min.append(lo[idx].min(axis=0))
        node_max.append(hi[idx].max(axis=0))
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(start)
        node_count.append(end - start)
        return len(node_min) - 1

    def build(start, end):
        me = alloc(start, end)
        if end - start <= leaf_size:
            return me
        idx = order[start:end]
        c = centers[idx]
        extent = np.max(c, axis=0) - np.min(c, axis=0)
        axis = int(np.argmax(extent))
        if extent[axis] <= 0.0:
            # coincident centroids cannot be split; keep the big leaf
            return me
        order[start:end] = idx[np.argsort(c[:, axis], kind="stable")]
        mid = start + (end - start) // 2
        left = build(start, mid)
        right = build(mid, end)
        node_left[me] = left
        node_right[me] = right
        node_count[me] = 0
        return me

    build(0, m)

    return Bvh(
        node_min=np.ascontiguousarray(np.array(node_min) - BOX_PAD),
        node_max=np.ascontiguousarray(np.array(node_max) + BOX_PAD),
        node_left=np.asarray(node_left, dtype=np.int64),
        node_right=np.asarray(node_right, dtype=np.int64),
        node_start=np.asarray(node_start, dtype=np.int64),
        node_count=np.asarray(node_count, dtype=np.int64),
        triangles=np.ascontiguousarray(tris[order]),
    )


@numba.njit(cache=True)
def _any_hit_one(ox, oy, oz, dx, dy, dz, node_min, node_max,
                 node_left, node_right, node_start, node_count, tri_pts):
    stack = np.empty(64, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]

        tmin = 0.0
        tmax = np.inf
        inside = True
        for axis in range(3):
            if axis == 0:
                o, d = ox, dx
            elif axis == 1:
                o, d = oy, dy
            else:
                o, d = oz, dz
            bmin = node_min[node, axis]
            bmax = node_max[node, axis]
            if d == 0.0:
                if o < bmin or o > bmax:
                    inside = False
                    break
            else:
                inv = 1.0 / d
                t1 = (bmin - o) * inv
                t2 = (bmax - o) * inv
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
                if tmin > tmax:
                    inside = False
                    break
        if not inside:
            continue

        count = node_count[node]
        if count == 0:
            stack[top] = node_left[node]
            top += 1
            stack[top] = node_right[node]
            top += 1
            continue

        start = node_start[node]
        for t in range(start, start + count):
            ax, ay, az = tri_pts[t, 0, 0], tri_pts[t, 0, 1], tri_pts[t, 0, 2]
            e1x = tri_pts[t, 1, 0] - ax
            e1y = tri_pts[t, 1, 1] - ay
            e1z = tri_pts[t, 1, 2] - az
            e2x = tri_pts[t, 2, 0] - ax
            e2y = tri_pts[t, 2, 1] - ay
            e2z = tri_pts[t, 2, 2] - az
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if det > -1e-12 and det < 1e-12:
                continue
            inv = 1.0 / det
            tx = ox - ax
            ty = oy - ay
            tz = oz - az
            u = (tx * px + ty * py + tz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = ty * e1z - tz * e1y
            qy = tz * e1x - tx * e1z
            qz = tx * e1y - ty * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            thit = (e2x * qx + e2y * qy + e2z * qz) * inv
            if thit > 0.0:
                return True
    return False


@numba.njit(cache=True, parallel=True)
def _any_hit_batch(origins, directions, node_min, node_max,
                   node_left, node_right, node_start, node_count, tri_pts):
    n = origins.shape[0]
    out = np.zeros(n, dtype=numba.boolean)
    for r in numba.prange(n):
        out[r] = _any_hit_one(
            origins[r, 0], origins[r, 1], origins[r, 2],
            directions[r, 0], directions[r, 1], directions[r, 2],
            node_min, node_max, node_left, node_right,
            node_start, node_count, tri_pts)
    return out


@numba.njit(cache=True, parallel=True)
def _shadow_counts(points, normals, sun_vecs, node_min, node_max,
                   node_left, node_right, node_start, node_count,
                   tri_pts, eps):
    """Shadowed-instant count per sample; per-sample counters keep the
    result independent of the parallel schedule."""
    n = points.shape[0]
    k = sun_vecs.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    for i in numba.prange(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        nx, ny, nz = normals[i, 0], normals[i, 1], normals[i, 2]
        ox = px + eps * nx
        oy = py + eps * ny
        oz = pz + eps * nz
        c = 0
        for j in range(k):
            sx, sy, sz = sun_vecs[j, 0], sun_vecs[j, 1], sun_vecs[j, 2]
            if nx * sx + ny * sy + nz * sz <= 0.0:
                c += 1
                continue
            if _any_hit_one(ox, oy, oz, sx, sy, sz,
                            node_min, node_max, node_left, node_right,
                            node_start, node_count, tri_pts):
                c += 1
        counts[i] = c
    return counts


def accumulate_shadow(samples: SurfaceSamples, scene: Bvh, path: SunPath,
                      name: str = "shadow") -> ThematicLayer:
    """Shadowed share of above-horizon instants, per sample point.

    A sample whose sun never rises during the window gets a null value.
    The layer's accumulation_minutes annotation is the total above-horizon
    time of the window (instant count times step length).
    """
    if not isinstance(scene, Bvh):
        scene = build_bvh(scene)
    if len(scene) == 0:
        raise EmptyScene("scene has no triangles")
    if len(path) == 0:
        raise EmptyPath("sun path has no instants")

    up = path.above_horizon()
    n_up = int(np.count_nonzero(up))
    points = np.ascontiguousarray(samples.points, dtype=np.float64)
    normals = np.ascontiguousarray(samples.normals, dtype=np.float64)

    if n_up == 0:
        values = [None] * len(samples)
    else:
        sun_vecs = np.ascontiguousarray(path.sun_vectors()[up])
        counts = _shadow_counts(points, normals, sun_vecs,
                                scene.node_min, scene.node_max,
                                scene.node_left, scene.node_right,
                                scene.node_start, scene.node_count,
                                scene.triangles, NORMAL_OFFSET)
        values = [float(c) / n_up for c in counts]

    covered_end = path.instants[-1] + timedelta(minutes=path.step_minutes)
    annotations = {
        "accumulation_minutes": n_up * path.step_minutes,
        "window_start": path.instants[0].strftime("%Y-%m-%dT%H:%M:%SZ"),
        "window_end": covered_end.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "step_minutes": path.step_minutes,
        "latitude": path.latitude,
        "longitude": path.longitude,
    }
    return samples.to_thematic(name, values=values, annotations=annotations)

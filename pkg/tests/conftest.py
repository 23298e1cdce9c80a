"""Shared fixtures and generators for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest


def star_polygon(rng: np.random.Generator, center=(0.0, 0.0), r_min=2.0,
                 r_max=10.0, n_min=4, n_max=12) -> np.ndarray:
    """Random simple polygon: star-shaped around its center, CCW, open.

    Simplicity needs the center inside the polygon, which needs every
    angular gap below pi; resample until that holds.
    """
    n = int(rng.integers(n_min, n_max + 1))
    while True:
        angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=max(n, 3)))
        keep = np.concatenate([[True], np.diff(angles) > 1e-3])
        angles = angles[keep]
        if len(angles) < 3:
            continue
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2.0 * math.pi]]))
        if float(np.max(gaps)) < 2.8:
            break
    radii = rng.uniform(r_min, r_max, size=len(angles))
    xs = center[0] + radii * np.cos(angles)
    ys = center[1] + radii * np.sin(angles)
    return np.column_stack([xs, ys])


def inscribed_distance(ring: np.ndarray, center=(0.0, 0.0)) -> float:
    """Distance from center to the closest boundary point of a ring."""
    best = math.inf
    n = len(ring)
    for i in range(n):
        ax, ay = ring[i]
        bx, by = ring[(i + 1) % n]
        dx, dy = bx - ax, by - ay
        len2 = dx * dx + dy * dy
        t = 0.0 if len2 == 0 else max(0.0, min(1.0, ((center[0] - ax) * dx + (center[1] - ay) * dy) / len2))
        ex, ey = center[0] - (ax + t * dx), center[1] - (ay + t * dy)
        best = min(best, math.hypot(ex, ey))
    return best


def star_polygon_with_hole(rng: np.random.Generator, center=(0.0, 0.0)):
    """Exterior star ring plus one CW hole star well inside it."""
    outer = star_polygon(rng, center, r_min=6.0, r_max=10.0, n_min=5, n_max=10)
    fit = inscribed_distance(outer, center)
    hole_ccw = star_polygon(rng, center, r_min=0.15 * fit, r_max=0.45 * fit,
                            n_min=3, n_max=7)
    return [outer, hole_ccw[::-1].copy()]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260822)

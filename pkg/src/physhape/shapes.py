"""Analytic signed-distance fixtures (positive inside).

These supply ground truth for tests and the starting geometry for the
synthetic acceptance fixtures. Union fields are exact outside and a
lower bound inside (max over members), which is all the fixtures need.
"""

import numpy as np


class AnalyticField:
    """Base: subclasses implement f(X) -> (N,), positive inside."""

    bounds = (-1.0, 1.0)

    def f(self, X):
        raise NotImplementedError

    def grad_f(self, X, h=1e-6):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        g = np.empty_like(X)
        for d in range(3):
            dp = X.copy()
            dp[:, d] += h
            dm = X.copy()
            dm[:, d] -= h
            g[:, d] = (self.f(dp) - self.f(dm)) / (2 * h)
        return g


class SphereField(AnalyticField):
    def __init__(self, radius=0.5, center=(0.0, 0.0, 0.0)):
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=np.float64)

    def f(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.radius - np.linalg.norm(X - self.center, axis=1)


class BoxField(AnalyticField):
    """Axis-aligned box, exact SDF on both sides."""

    def __init__(self, half, center=(0.0, 0.0, 0.0)):
        self.half = np.asarray(half, dtype=np.float64) * np.ones(3)
        self.center = np.asarray(center, dtype=np.float64)

    def f(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        q = np.abs(X - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return -(outside + inside)


class UnionField(AnalyticField):
    def __init__(self, members):
        self.members = list(members)

    def f(self, X):
        return np.max([m.f(X) for m in self.members], axis=0)


def table_field(leg=0.14, necked_leg=0.09, slab_top=0.55, slab_thick=0.18,
                half_span=0.55, leg_center=0.38):
    """Slab on four legs; one leg is thinner mid-height so the initial
    shape carries a pronounced stress concentration."""
    parts = [BoxField((half_span, half_span, slab_thick / 2),
                      (0, 0, slab_top - slab_thick / 2))]
    zmid = (slab_top - slab_thick) / 2 - 0.55 / 2
    leg_h = (slab_top - slab_thick + 0.55) / 2 + 0.06
    for i, (sx, sy) in enumerate([(1, 1), (1, -1), (-1, 1), (-1, -1)]):
        cx, cy = sx * leg_center, sy * leg_center
        parts.append(BoxField((leg / 2, leg / 2, leg_h),
                              (cx, cy, zmid)))
        if i == 0 and necked_leg is not None and necked_leg < leg:
            # carve the neck by replacing a mid-section: the full leg is
            # built from two stubs plus a thinner middle block
            parts[-1] = BoxField((leg / 2, leg / 2, leg_h / 2.6),
                                 (cx, cy, zmid + leg_h * 0.62))
            parts.append(BoxField((leg / 2, leg / 2, leg_h / 2.6),
                                  (cx, cy, zmid - leg_h * 0.62)))
            parts.append(BoxField((necked_leg / 2, necked_leg / 2,
                                   leg_h * 0.55),
                                  (cx, cy, zmid)))
    return UnionField(parts)

#!/usr/bin/env python3
"""
projections.py

Euclidean projections used by the PGD loops:

- project_l2      onto {u : ||u - c||_2 <= r}
- project_l1      onto {u : ||u - c||_1 <= r}   (sort-based, O(p log p))
- project_sphere  onto {u : ||u||_2 = r}
- project_ball    dispatch on BallSpec.norm

The anchored l1 ball is how the extended range  G1(B2(r1)) + B1(r2)  is
searched: the center is the current range point z_hat^p.

Points already feasible up to a relative 1e-13 are returned untouched, which
keeps every projection idempotent in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_RTOL = 1e-13
FEAS_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class BallSpec:
    center: np.ndarray
    radius: float
    norm: str = "l1"   # "l1" | "l2"

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        if c.ndim != 1:
            raise ValueError(f"BallSpec: center must be 1-D, got shape {c.shape}")
        if self.radius < 0:
            raise ValueError(f"BallSpec: radius must be >= 0, got {self.radius}")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"BallSpec: unknown norm {self.norm!r}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return int(self.center.shape[0])

    def distance(self, v) -> float:
        d = np.asarray(v, dtype=np.float64) - self.center
        return float(np.abs(d).sum() if self.norm == "l1" else np.linalg.norm(d))

    def contains(self, v, atol: float = 1e-12) -> bool:
        return self.distance(v) <= self.radius + atol


def _slack(r: float) -> float:
    return min(FEAS_RTOL * max(1.0, r), FEAS_ATOL)


def _check_dims(v: np.ndarray, ball: BallSpec, what: str) -> None:
    if v.shape != ball.center.shape:
        raise ValueError(f"{what}: dim mismatch v{v.shape} vs center{ball.center.shape}")


def project_l2(v, ball: BallSpec) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    _check_dims(v, ball, "project_l2")
    d = v - ball.center
    nrm = float(np.linalg.norm(d))
    if nrm <= ball.radius + _slack(ball.radius):
        return v.copy()
    return ball.center + (ball.radius / nrm) * d


def project_l1(v, ball: BallSpec) -> np.ndarray:
    """
    Duchi et al. sort-based projection onto the anchored l1 ball.

    Shift by the center, sort |d| descending (ties by original index),
    theta = (sum_{i<=rho} |d|_(i) - r) / rho for the largest rho with
    |d|_(rho) > theta, soft-threshold by theta, restore signs, shift back.
    """
    v = np.asarray(v, dtype=np.float64)
    _check_dims(v, ball, "project_l1")
    r = ball.radius
    if r == 0.0:
        return ball.center.copy()
    d = v - ball.center
    a = np.abs(d)
    if a.sum() <= r + _slack(r):
        return v.copy()

    order = np.argsort(-a, kind="stable")
    u = a[order]
    css = np.cumsum(u)
    ks = np.arange(1, u.shape[0] + 1, dtype=np.float64)
    rho = int(np.nonzero(u * ks > css - r)[0][-1])
    theta = (css[rho] - r) / (rho + 1.0)
    w = np.sign(d) * np.maximum(a - theta, 0.0)
    return ball.center + w


def project_sphere(v, radius: float) -> np.ndarray:
    if radius <= 0:
        raise ValueError(f"project_sphere: radius must be > 0, got {radius}")
    v = np.asarray(v, dtype=np.float64)
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        out = np.zeros_like(v)
        out[0] = radius
        return out
    if abs(nrm - radius) <= _slack(radius):
        return v.copy()
    return (radius / nrm) * v


def project_ball(v, ball: BallSpec) -> np.ndarray:
    if ball.norm == "l1":
        return project_l1(v, ball)
    return project_l2(v, ball)

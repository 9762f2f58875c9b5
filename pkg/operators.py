#!/usr/bin/env python3
"""
operators.py

Linear measurement processes  y = A x + noise  with exact adjoints.

Kinds:
    identity          A = I                          (denoising)
    mask              rows of I on an index set      (inpainting / random inpainting)
    gaussian          dense A_ij ~ N(0, 1/m)         (compressed sensing)
    circulant_signed  rows of circ(g) D, g ~ N(0, 1/m), D = diag(+-1)
    downsample        non-overlapping box average    (super-resolution)

Every operator can be described by a small JSON descriptor
{kind, m, n, seed, params} that rebuilds it bit-exactly, so experiment
reports pin their measurements down completely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from numerics import fft_circular_convolve, make_rng

KINDS = ("identity", "mask", "gaussian", "circulant_signed", "downsample")


class OperatorError(ValueError):
    pass


# ---------- OPERATORS ----------

class MeasurementOperator:
    kind = "abstract"

    def __init__(self, m: int, n: int):
        if m < 1 or n < 1:
            raise OperatorError(f"{self.kind}: dims must be positive, got m={m}, n={n}")
        self.m = int(m)
        self.n = int(n)
        self.descriptor: Dict[str, Any] = {"kind": self.kind, "m": self.m, "n": self.n}

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise OperatorError(f"{self.kind}.apply: expected shape ({self.n},), got {x.shape}")
        return self._apply(x)

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.m,):
            raise OperatorError(f"{self.kind}.adjoint: expected shape ({self.m},), got {y.shape}")
        return self._adjoint(y)

    def _apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{type(self).__name__} kind={self.kind} m={self.m} n={self.n}>"


class IdentityOperator(MeasurementOperator):
    kind = "identity"

    def __init__(self, n: int):
        super().__init__(n, n)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, y):
        return y.copy()


class MaskOperator(MeasurementOperator):
    kind = "mask"

    def __init__(self, n: int, observed: Sequence[int]):
        idx = np.asarray(list(observed), dtype=np.int64)
        if idx.ndim != 1 or idx.size < 1:
            raise OperatorError("mask: observed index set must be non-empty")
        if np.any(idx < 0) or np.any(idx >= n):
            raise OperatorError(f"mask: indices must lie in [0, {n})")
        if np.unique(idx).size != idx.size:
            raise OperatorError("mask: duplicate observed indices")
        super().__init__(int(idx.size), n)
        self.observed = np.sort(idx)
        self.descriptor["params"] = {"observed": self.observed.tolist()}

    def _apply(self, x):
        return x[self.observed]

    def _adjoint(self, y):
        out = np.zeros(self.n)
        out[self.observed] = y
        return out


class GaussianOperator(MeasurementOperator):
    kind = "gaussian"

    def __init__(self, matrix):
        a = np.array(matrix, dtype=np.float64)
        if a.ndim != 2:
            raise OperatorError(f"gaussian: matrix must be 2-D, got shape {a.shape}")
        super().__init__(a.shape[0], a.shape[1])
        a.setflags(write=False)
        self.matrix = a

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, y):
        return self.matrix.T @ y


class CirculantSignedOperator(MeasurementOperator):
    """
    x -> (circ(g) @ (signs * x))[rows]

    circ(g) has g as its first column (out[i] = sum_j g[i-j] x[j]); the adjoint
    scatters y back onto the kept rows, correlates with g and re-applies signs.
    """

    kind = "circulant_signed"

    def __init__(self, g, signs, rows: Optional[Sequence[int]] = None):
        g = np.array(g, dtype=np.float64)
        signs = np.array(signs, dtype=np.float64)
        n = g.shape[0]
        if g.ndim != 1 or signs.shape != (n,):
            raise OperatorError(f"circulant_signed: g{g.shape} and signs{signs.shape} must be equal-length vectors")
        if not np.all(np.abs(signs) == 1.0):
            raise OperatorError("circulant_signed: signs must be +-1")
        rows_arr = np.arange(n) if rows is None else np.asarray(list(rows), dtype=np.int64)
        if rows_arr.size < 1 or rows_arr.size > n:
            raise OperatorError(f"circulant_signed: need 1 <= m <= n, got m={rows_arr.size}, n={n}")
        if np.any(rows_arr < 0) or np.any(rows_arr >= n) or np.unique(rows_arr).size != rows_arr.size:
            raise OperatorError("circulant_signed: rows must be distinct indices in [0, n)")
        super().__init__(int(rows_arr.size), n)
        self.g = g
        self.signs = signs
        self.rows = rows_arr
        # g_rev[k] = g[-k mod n] turns the transpose into another circular convolution
        self._g_rev = np.roll(g[::-1], 1)

    def _apply(self, x):
        return fft_circular_convolve(self.g, self.signs * x)[self.rows]

    def _adjoint(self, y):
        full = np.zeros(self.n)
        full[self.rows] = y
        return self.signs * fft_circular_convolve(self._g_rev, full)


class DownsampleOperator(MeasurementOperator):
    kind = "downsample"

    def __init__(self, n: int, factor: int):
        if factor < 1 or n % factor != 0:
            raise OperatorError(f"downsample: factor {factor} must divide n={n}")
        super().__init__(n // factor, n)
        self.factor = int(factor)
        self.descriptor["params"] = {"factor": self.factor}

    def _apply(self, x):
        return x.reshape(self.m, self.factor).mean(axis=1)

    def _adjoint(self, y):
        return np.repeat(y, self.factor) / self.factor


# ---------- FACTORIES ----------

def make_identity(n: int) -> MeasurementOperator:
    return IdentityOperator(n)


def make_mask(n: int, observed: Sequence[int]) -> MeasurementOperator:
    return MaskOperator(n, observed)


def make_random_mask(rng: np.random.Generator, n: int, keep_prob: float) -> MeasurementOperator:
    if not (0.0 < keep_prob <= 1.0):
        raise OperatorError(f"random mask: keep_prob must be in (0, 1], got {keep_prob}")
    while True:
        keep = rng.random(n) < keep_prob
        if keep.any():
            break
    op = MaskOperator(n, np.nonzero(keep)[0])
    op.descriptor["params"]["keep_prob"] = float(keep_prob)
    return op


def make_gaussian(rng: np.random.Generator, m: int, n: int) -> MeasurementOperator:
    if m < 1 or n < 1:
        raise OperatorError(f"gaussian: dims must be positive, got m={m}, n={n}")
    return GaussianOperator(rng.standard_normal((m, n)) / math.sqrt(m))


def make_circulant_signed(
    rng: np.random.Generator,
    m: int,
    n: int,
    row_subset: Optional[Sequence[int]] = None,
    random_rows: bool = False,
) -> MeasurementOperator:
    """
    g ~ N(0, 1/m) i.i.d., uniform signs, rows = first m unless row_subset is
    given or random_rows asks for a uniformly random m-subset (kept sorted).
    """
    if not (1 <= m <= n):
        raise OperatorError(f"circulant_signed: need 1 <= m <= n, got m={m}, n={n}")
    g = rng.standard_normal(n) / math.sqrt(m)
    signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    if row_subset is not None:
        rows = np.asarray(list(row_subset), dtype=np.int64)
        if rows.size != m:
            raise OperatorError(f"circulant_signed: row_subset has {rows.size} rows, expected {m}")
    elif random_rows:
        rows = np.sort(rng.choice(n, size=m, replace=False))
    else:
        rows = np.arange(m)
    op = CirculantSignedOperator(g, signs, rows)
    if row_subset is not None:
        op.descriptor["params"] = {"rows": rows.tolist()}
    else:
        op.descriptor["params"] = {"rows": "random" if random_rows else "first"}
    return op


def make_downsample(n: int, factor: int) -> MeasurementOperator:
    return DownsampleOperator(n, factor)


# ---------- NOISE / SENSING ----------

@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    clip: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.sigma < 0:
            raise OperatorError(f"noise sigma must be >= 0, got {self.sigma}")
        if self.clip is not None and not (self.clip[0] < self.clip[1]):
            raise OperatorError(f"noise clip range must satisfy lo < hi, got {self.clip}")


def sense(op: MeasurementOperator, x, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    y = op.apply(x)
    if noise.sigma > 0:
        y = y + noise.sigma * rng.standard_normal(op.m)
    if noise.clip is not None:
        y = np.clip(y, noise.clip[0], noise.clip[1])
    return y


# ---------- UTILITIES ----------

def dense_matrix(op: MeasurementOperator) -> np.ndarray:
    eye = np.eye(op.n)
    return np.column_stack([op.apply(eye[:, j]) for j in range(op.n)])


def operator_norm(op: MeasurementOperator, iters: int = 500, tol: float = 1e-10) -> Tuple[float, bool]:
    """Matrix-free power iteration on A^T A; returns (||A||_op estimate, converged)."""
    v = make_rng(0).standard_normal(op.n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        av = op.apply(v)
        new_est = float(np.linalg.norm(av))
        u = op.adjoint(av)
        nu = float(np.linalg.norm(u))
        if nu == 0.0:
            return new_est, True
        v = u / nu
        if abs(new_est - est) <= tol * max(new_est, 1e-300):
            return new_est, True
        est = new_est
    return est, False


def build_operator(descriptor: Dict[str, Any]) -> MeasurementOperator:
    """
    Rebuild an operator from {kind, n, m?, seed?, params?}. Random kinds draw
    from make_rng(seed), so the same descriptor always gives the same matrix.
    """
    kind = descriptor.get("kind")
    if kind not in KINDS:
        raise OperatorError(f"unknown operator kind {kind!r}")
    n = int(descriptor["n"])
    params = dict(descriptor.get("params") or {})
    seed = int(descriptor.get("seed", 0))

    if kind == "identity":
        op = make_identity(n)
    elif kind == "downsample":
        op = make_downsample(n, int(params.get("factor", 2)))
    elif kind == "mask":
        if "observed" in params:
            op = make_mask(n, params["observed"])
        else:
            op = make_random_mask(make_rng(seed), n, float(params.get("keep_prob", 1.0)))
    elif kind == "gaussian":
        op = make_gaussian(make_rng(seed), int(descriptor["m"]), n)
    else:
        rows = params.get("rows", "first")
        op = make_circulant_signed(
            make_rng(seed),
            int(descriptor["m"]),
            n,
            row_subset=rows if isinstance(rows, list) else None,
            random_rows=rows == "random",
        )
    op.descriptor["seed"] = seed
    return op


def to_descriptor(op: MeasurementOperator) -> Dict[str, Any]:
    return dict(op.descriptor)

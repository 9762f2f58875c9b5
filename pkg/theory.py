#!/usr/bin/env python3
"""
theory.py

Executable covering-number and S-REC arithmetic for the extended range
    G2( G1(B2^k(r1)) + B1^p(r2) )

Bounds (log covering numbers, nats):
    maurey      (r^2/delta^2) * log(2d + 1)
    volumetric  d * log(4r/delta), floored at 0
    sudakov     16 (r^2/delta^2) * log d,  d >= 2

Measurement count for S-REC(gamma, delta) with Gaussian A:
    m = ceil( C/(1-gamma)^2 * (k log(L1 L2 r1 / delta) + K^2 log p) ),  r2 = K delta / L2
Error bound:
    ||x - x_hat|| <= (1 + 4/gamma) ||x - G2(z_bar)|| + delta log(4K)/gamma * sqrt(p)/K * log(sqrt(p)/K)

C is the hidden Omega() constant; it is always explicit (default 1).
S-REC checks are Monte-Carlo over sampled pairs: a necessary-condition check only.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from generator import GeneratorSplit, LayeredGenerator, apply, split
from numerics import Rng, as_vec
from operators import MeasurementOperator
from report_utils import log

ENUM_BUDGET = 10**6
CONSTRAINT_SLACK = 1e-12


class TheoryError(ValueError):
    pass


# ---------- PARAMETERS ----------

@dataclass(frozen=True)
class TheoryParams:
    k: int
    p: int
    n: int
    K: float
    delta: float
    gamma: float = 0.8
    r1: float = 1.0
    L1: float = 1.0
    L2: float = 1.0
    C: float = 1.0

    def __post_init__(self):
        if min(self.k, self.p, self.n) < 1:
            raise TheoryError(f"dims must be >= 1, got k={self.k}, p={self.p}, n={self.n}")
        if not (1.0 < self.K <= math.sqrt(self.p) * (1.0 + 1e-12)):
            raise TheoryError(f"K must satisfy 1 < K <= sqrt(p)={math.sqrt(self.p):.6g}, got {self.K}")
        if self.delta <= 0:
            raise TheoryError(f"delta must be > 0, got {self.delta}")
        if not (0.0 < self.gamma < 1.0):
            raise TheoryError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("r1", "L1", "L2", "C"):
            if getattr(self, name) <= 0:
                raise TheoryError(f"{name} must be > 0, got {getattr(self, name)}")

    @property
    def r2(self) -> float:
        return self.K * self.delta / self.L2


@dataclass(frozen=True)
class MeasurementCount:
    m: int
    floored: bool = False   # log(L1 L2 r1 / delta) <= 0 was clipped to 0
    capped: bool = False    # clipped to the ambient dimension n
    raw: float = 0.0


def suggest_params(
    k: int,
    p: int,
    n: Optional[int] = None,
    L1: float = 1.0,
    L2: float = 1.0,
    r1: float = 1.0,
    gamma: float = 0.8,
    C: float = 1.0,
) -> TheoryParams:
    """K ~ sqrt(k) clipped into (1, sqrt(p)], delta = 1/sqrt(p)."""
    if p < 2:
        raise TheoryError(f"need p >= 2 for a K in (1, sqrt(p)], got p={p}")
    root_p = math.sqrt(p)
    K = min(max(math.sqrt(k), min(2.0, root_p)), root_p)
    return TheoryParams(
        k=k, p=p, n=n if n is not None else p, K=K, delta=1.0 / root_p,
        gamma=gamma, r1=r1, L1=L1, L2=L2, C=C,
    )


# ---------- COVERING BOUNDS ----------

def _check_rd(r: float, delta: float, d: int) -> None:
    if r <= 0 or delta <= 0:
        raise TheoryError(f"r and delta must be > 0, got r={r}, delta={delta}")
    if d < 1:
        raise TheoryError(f"d must be >= 1, got {d}")


def bound_maurey(r: float, delta: float, d: int) -> float:
    _check_rd(r, delta, d)
    return (r * r) / (delta * delta) * math.log(2 * d + 1)


def bound_volumetric(r: float, delta: float, d: int) -> float:
    _check_rd(r, delta, d)
    if delta >= 4.0 * r:
        return 0.0
    return max(0.0, d * math.log(4.0 * r / delta))


def bound_sudakov(r: float, delta: float, d: int) -> float:
    _check_rd(r, delta, d)
    if d < 2:
        raise TheoryError("sudakov bound needs d >= 2 (log d vanishes at d = 1)")
    return 16.0 * (r * r) / (delta * delta) * math.log(d)


def exact_log_covering_1d(r: float, delta: float) -> float:
    """[-r, r] needs exactly ceil(r/delta) intervals of half-width delta."""
    _check_rd(r, delta, 1)
    return math.log(math.ceil(r / delta - 1e-12))


def maurey_volumetric_crossover(r: float, d: int) -> float:
    """delta* in (r*1e-6, r] where the Maurey and volumetric bounds meet."""
    _check_rd(r, r, d)

    def gap(delta):
        return bound_maurey(r, delta, d) - bound_volumetric(r, delta, d)

    lo, hi = r * 1e-6, r
    if gap(hi) >= 0:
        raise TheoryError(f"no crossover in ({lo:.3g}, {hi:.3g}] for d={d}")
    return float(brentq(gap, lo, hi, xtol=1e-14 * r, rtol=1e-12))


# ---------- MAUREY NETS ----------

@dataclass
class MaureyNet:
    d: int
    r: float
    delta: float
    t: int
    mode: str = "enumerate"            # "enumerate" | "sample"
    points: Optional[np.ndarray] = None  # (N, d), enumerate mode only

    def sample(self, x, rng: Rng, count: int = 1) -> np.ndarray:
        """
        Averages of t atoms drawn from the law sgn(x_i) r e_i w.p. |x_i|/r,
        0 otherwise. E||Z - x||^2 <= r ||x||_1 / t <= delta^2.
        Returns shape (count, d).
        """
        x = as_vec(x, "maurey target")
        if x.shape[0] != self.d:
            raise TheoryError(f"maurey target dim {x.shape[0]} != d {self.d}")
        l1 = float(np.abs(x).sum())
        if l1 > self.r * (1.0 + CONSTRAINT_SLACK):
            raise TheoryError(f"maurey target has ||x||_1 = {l1:.6g} > r = {self.r}")
        probs = np.append(np.abs(x) / self.r, max(0.0, 1.0 - l1 / self.r))
        probs /= probs.sum()
        atoms = np.zeros((self.d + 1, self.d))
        atoms[np.arange(self.d), np.arange(self.d)] = np.sign(x) * self.r
        draws = rng.choice(self.d + 1, size=(count, self.t), p=probs)
        return atoms[draws].mean(axis=1)


def maurey_t(r: float, delta: float) -> int:
    return max(1, int(math.ceil(r * r / (delta * delta) - 1e-9)))


def maurey_net_build(d: int, r: float, delta: float, mode: str = "enumerate") -> MaureyNet:
    """
    enumerate: every distinct average of t atoms from {+-r e_i, 0}. Such an
    average is r w / t for an integer w with ||w||_1 <= t, so points are
    deduplicated on w exactly.
    sample: no materialized points; use MaureyNet.sample per target.
    """
    _check_rd(r, delta, d)
    t = maurey_t(r, delta)
    if mode == "sample":
        return MaureyNet(d=d, r=r, delta=delta, t=t, mode="sample")
    if mode != "enumerate":
        raise TheoryError(f"unknown maurey mode {mode!r}")
    if (2 * d + 1) ** t > ENUM_BUDGET:
        raise TheoryError(f"enumeration budget exceeded: (2d+1)^t = {(2 * d + 1) ** t} > {ENUM_BUDGET}")

    keys = set()
    for combo in itertools.combinations_with_replacement(range(2 * d + 1), t):
        w = [0] * d
        for a in combo:
            if a < d:
                w[a] += 1
            elif a < 2 * d:
                w[a - d] -= 1
        keys.add(tuple(w))
    pts = np.array(sorted(keys), dtype=np.float64) * (r / t)
    return MaureyNet(d=d, r=r, delta=delta, t=t, mode="enumerate", points=pts)


def net_cover_radius(points, queries) -> float:
    """max over queries of the distance to the nearest net point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    qry = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if pts.shape[1] != qry.shape[1]:
        raise TheoryError(f"net dim {pts.shape[1]} != query dim {qry.shape[1]}")
    dist, _ = cKDTree(pts).query(qry, k=1)
    return float(np.max(dist))


# ---------- SAMPLE COMPLEXITY ----------

def _range_log(tp: TheoryParams) -> Tuple[float, bool]:
    ratio = tp.L1 * tp.L2 * tp.r1 / tp.delta
    if ratio <= 1.0:
        return 0.0, True
    return math.log(ratio), False


def sample_complexity(tp: TheoryParams) -> MeasurementCount:
    lg, floored = _range_log(tp)
    raw = tp.C / (1.0 - tp.gamma) ** 2 * (tp.k * lg + tp.K ** 2 * math.log(tp.p))
    return MeasurementCount(m=int(math.ceil(raw - 1e-9)), floored=floored, raw=raw)


def sample_complexity_intermediate_csgm(tp: TheoryParams) -> MeasurementCount:
    """CSGM run directly on the p-dim layer: the l1 deviation is paid as p log K."""
    lg, floored = _range_log(tp)
    raw = tp.C / (1.0 - tp.gamma) ** 2 * (tp.k * lg + tp.p * math.log(tp.K))
    return MeasurementCount(m=int(math.ceil(raw - 1e-9)), floored=floored, raw=raw)


def sample_complexity_circulant(tp: TheoryParams, n: Optional[int] = None) -> MeasurementCount:
    """Gaussian count inflated by log^4 n, capped at n (a partial circulant has <= n rows)."""
    n = tp.n if n is None else int(n)
    base = sample_complexity(tp)
    raw = base.raw * math.log(n) ** 4 if n > 1 else base.raw
    m = int(math.ceil(raw - 1e-9))
    capped = m > n
    return MeasurementCount(m=min(max(m, 1), n), floored=base.floored, capped=capped, raw=raw)


def additive_error_term(tp: TheoryParams) -> float:
    ratio = math.sqrt(tp.p) / tp.K
    if ratio <= 1.0:
        return 0.0
    term = tp.delta * math.log(4.0 * tp.K) / tp.gamma * ratio * math.log(ratio)
    return max(0.0, term)


def error_bound_rhs(tp: TheoryParams, oracle_error: float) -> float:
    if oracle_error < 0:
        raise TheoryError(f"oracle_error must be >= 0, got {oracle_error}")
    return (1.0 + 4.0 / tp.gamma) * oracle_error + additive_error_term(tp)


def chain_bound_table(tp: TheoryParams, n: Optional[int] = None) -> pd.DataFrame:
    """
    Per-scale bound arithmetic for the chaining argument: scales
    delta_i = delta / 2^i for i = 0..ceil(log2 n); the l1 part is covered
    volumetrically below the switch index log2(sqrt(p)/K) and with Maurey's
    bound from it on. The prefix range contributes k log(4 L1 L2 r1 / delta_i).
    log|T_i| <= log|N_i| + log|N_{i+1}| (pairs of consecutive net points).
    """
    n = tp.n if n is None else int(n)
    depth = max(1, int(math.ceil(math.log2(max(n, 2)))))
    switch = max(0, int(math.floor(math.log2(math.sqrt(tp.p) / tp.K)))) if math.sqrt(tp.p) > tp.K else 0
    r2 = tp.r2

    rows = []
    for i in range(depth + 2):
        d_i = tp.delta / 2 ** i
        maurey = bound_maurey(r2, d_i / tp.L2, tp.p)
        volumetric = bound_volumetric(r2, d_i / tp.L2, tp.p)
        method = "volumetric" if i < switch else "maurey"
        range_term = max(0.0, tp.k * math.log(4.0 * tp.L1 * tp.L2 * tp.r1 / d_i))
        rows.append({
            "i": i,
            "delta_i": d_i,
            "method": method,
            "log_N_maurey": maurey,
            "log_N_volumetric": volumetric,
            "log_N_range": range_term,
            "log_N": range_term + (volumetric if method == "volumetric" else maurey),
        })
    df = pd.DataFrame(rows)
    df["log_T"] = df["log_N"] + df["log_N"].shift(-1)
    return df.iloc[: depth + 1].reset_index(drop=True)


def bound_table(ds, rs, deltas) -> pd.DataFrame:
    rows = []
    for d, r, delta in itertools.product(ds, rs, deltas):
        rows.append({
            "d": int(d),
            "r": float(r),
            "delta": float(delta),
            "bound_maurey": bound_maurey(r, delta, d),
            "bound_volumetric": bound_volumetric(r, delta, d),
            "bound_sudakov": bound_sudakov(r, delta, d) if d >= 2 else float("nan"),
        })
    return pd.DataFrame(rows)


def complexity_table(params: List[TheoryParams]) -> pd.DataFrame:
    rows = []
    for tp in params:
        mc = sample_complexity(tp)
        rows.append({
            "k": tp.k,
            "p": tp.p,
            "K": tp.K,
            "gamma": tp.gamma,
            "delta": tp.delta,
            "m": mc.m,
            "additive_error_term": additive_error_term(tp),
            "m_intermediate_csgm": sample_complexity_intermediate_csgm(tp).m,
            "floored": mc.floored,
        })
    return pd.DataFrame(rows)


# ---------- SAMPLING / PLANTING ----------

@dataclass
class Plant:
    x: np.ndarray
    z: np.ndarray          # input code in B2^k(r1)
    v: np.ndarray          # sparse l1 deviation at the split layer
    split_index: int
    z_bar: np.ndarray = field(default=None)   # G1(z) + v

    @property
    def in_range(self) -> bool:
        return not np.any(self.v)


def uniform_ball(rng: Rng, k: int, r1: float) -> np.ndarray:
    u = rng.standard_normal(k)
    nrm = float(np.linalg.norm(u))
    if nrm == 0.0:
        u = np.zeros(k)
        u[0] = 1.0
        nrm = 1.0
    return u / nrm * (r1 * rng.random() ** (1.0 / k))


def _sparse_deviation(rng: Rng, p: int, r2: float, sparsity: int, l1_fraction: float) -> np.ndarray:
    v = np.zeros(p)
    s = min(int(sparsity), p)
    if r2 <= 0 or s <= 0 or l1_fraction <= 0:
        return v
    support = rng.choice(p, size=s, replace=False)
    mags = rng.dirichlet(np.ones(s)) * (r2 * l1_fraction)
    signs = np.where(rng.random(s) < 0.5, -1.0, 1.0)
    v[support] = signs * mags
    return v


def extended_range_sampler(
    sp: GeneratorSplit,
    r1: float,
    r2: float,
    rng: Rng,
    sparsity: int = 3,
    l1_fraction: float = 1.0,
    return_plant: bool = False,
):
    """x = G2(G1(z) + v), z uniform in B2^k(r1), v s-sparse with ||v||_1 = l1_fraction * r2."""
    if r1 <= 0 or r2 < 0:
        raise TheoryError(f"need r1 > 0 and r2 >= 0, got r1={r1}, r2={r2}")
    if not (0.0 <= l1_fraction <= 1.0):
        raise TheoryError(f"l1_fraction must lie in [0, 1], got {l1_fraction}")
    z = uniform_ball(rng, sp.k, r1)
    v = _sparse_deviation(rng, sp.p, r2, sparsity, l1_fraction)
    z_bar = apply(sp.prefix, z) + v
    x = apply(sp.suffix, z_bar)
    if return_plant:
        return Plant(x=x, z=z, v=v, split_index=sp.split_index, z_bar=z_bar)
    return x


def plant(
    g: LayeredGenerator,
    split_index: int,
    r1: float,
    r2: float,
    sparsity: int,
    l1_fraction: float,
    rng: Rng,
) -> Plant:
    return extended_range_sampler(
        split(g, split_index), r1, r2, rng, sparsity=sparsity, l1_fraction=l1_fraction, return_plant=True,
    )


# ---------- S-REC ----------

def srec_check(
    op: MeasurementOperator,
    sampler: Callable[[Rng], np.ndarray],
    gamma: float,
    pairs: int,
    rng: Rng,
) -> float:
    """Smallest delta for which ||A(x1-x2)|| >= gamma ||x1-x2|| - delta holds on the sampled pairs."""
    if pairs < 1:
        raise TheoryError(f"pairs must be >= 1, got {pairs}")
    worst = 0.0
    for _ in range(pairs):
        diff = sampler(rng) - sampler(rng)
        gap = gamma * float(np.linalg.norm(diff)) - float(np.linalg.norm(op.apply(diff)))
        worst = max(worst, gap)
    return worst


def srec_distribution(
    build_op: Callable[[int], MeasurementOperator],
    sampler: Callable[[Rng], np.ndarray],
    gamma: float,
    pairs: int,
    draws: int,
    rng: Rng,
) -> Dict[str, object]:
    """srec_check over `draws` operator redraws; build_op(draw_index) returns a fresh operator."""
    if draws < 1:
        raise TheoryError(f"draws must be >= 1, got {draws}")
    deltas = [srec_check(build_op(i), sampler, gamma, pairs, rng) for i in range(draws)]
    arr = np.asarray(deltas)
    log(f"srec: {draws} draws x {pairs} pairs, median delta {float(np.median(arr)):.4g}", tag="theory")
    return {
        "deltas": deltas,
        "min": float(arr.min()),
        "median": float(np.median(arr)),
        "max": float(arr.max()),
        "pairs": int(pairs),
        "draws": int(draws),
    }

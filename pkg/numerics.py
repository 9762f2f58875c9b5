#!/usr/bin/env python3
"""
numerics.py

Deterministic numeric substrate shared by every other module.

- Vectors / matrices are plain float64 numpy arrays (1-D / 2-D).
- All sampling goes through numpy.random.Generator(PCG64) seeded explicitly.
  Normal draws use numpy's ziggurat sampler, so a seed reproduces bit-exactly
  within one numpy version; across implementations only the statistics match.
- Circulant products are done in the Fourier domain with scipy.fft, which
  handles any length n (no power-of-two padding needed).
- Spectral norms come from power iteration on W^T W.
"""

from __future__ import annotations

from typing import Tuple, Union

import numpy as np
from scipy import fft as sp_fft

Rng = np.random.Generator

SPECTRAL_ITERS = 1000
SPECTRAL_TOL = 1e-12

# fixed start vector seed for power iteration
_POWER_SEED = 0x5EED


# ---------- RNG ----------

def make_rng(seed: int) -> Rng:
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(seed: int, *keys: Union[int, str]) -> int:
    """
    Child seed for a named / indexed sub-stream, e.g. derive_seed(7, "plant", 3).
    Strings are folded to integers through their UTF-8 bytes so the mapping is
    stable across runs (unlike hash()).
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            entropy.append(int.from_bytes(k.encode("utf-8"), "little") % (2**63))
        else:
            entropy.append(int(k))
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def randn(rng: Rng, n: int, sigma: float = 1.0) -> np.ndarray:
    if n < 1:
        raise ValueError(f"randn: n must be >= 1, got {n}")
    if sigma < 0:
        raise ValueError(f"randn: sigma must be >= 0, got {sigma}")
    draws = rng.standard_normal(int(n))
    return draws * float(sigma)


# ---------- VECTORS ----------

def as_vec(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"{name}: expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name}: contains non-finite entries")
    return v


# ---------- CIRCULANT ----------

def fft_circular_convolve(g, x) -> np.ndarray:
    """
    circulant(g) @ x, i.e. out[i] = sum_j g[(i - j) mod n] * x[j].
    g is the first column of the circulant matrix.
    """
    g = np.asarray(g, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if g.ndim != 1 or x.ndim != 1 or g.shape[0] != x.shape[0] or g.shape[0] < 1:
        raise ValueError(
            f"fft_circular_convolve: dimension mismatch g{g.shape} vs x{x.shape}"
        )
    n = g.shape[0]
    return sp_fft.irfft(sp_fft.rfft(g) * sp_fft.rfft(x), n=n)


# ---------- SPECTRAL NORM ----------

def spectral_norm(w, iters: int = SPECTRAL_ITERS, tol: float = SPECTRAL_TOL) -> Tuple[float, bool]:
    """
    Power-iteration estimate of sigma_max(w). Returns (estimate, converged).

    The estimate is ||w v|| for a unit v, so it never exceeds the true value.
    Converged means the relative change between two iterations fell below tol.
    """
    if iters < 1:
        raise ValueError(f"spectral_norm: iters must be >= 1, got {iters}")
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"spectral_norm: expected 2-D matrix, got shape {w.shape}")
    if not np.any(w):
        return 0.0, True

    v = make_rng(_POWER_SEED).standard_normal(w.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        wv = w @ v
        new_est = float(np.linalg.norm(wv))
        u = w.T @ wv
        nu = np.linalg.norm(u)
        if nu == 0.0:
            # start vector landed in the null space
            return new_est, True
        v = u / nu
        if abs(new_est - est) <= tol * max(new_est, 1e-300):
            return new_est, True
        est = new_est
    return est, False

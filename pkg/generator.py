#!/usr/bin/env python3
"""
generator.py

Layered feed-forward generator G = G_d o ... o G_1.

Each layer is  h -> act(W h + b)  with act in {identity, relu, leaky_relu, tanh},
all 1-Lipschitz. The module provides:

- forward(g, z)          output + per-layer pre-activation cache
- vjp(g, cache, cot, z)  exact J^T cot for the cached point (z checked if given)
- split(g, s)            (prefix = layers 1..s, suffix = layers s+1..d)
- lipschitz(g)           per-layer spectral norms and their products
- save / load            JSON model files, format version 1
- synthesize             random spectral-normalized toy generators

Model file layout:

    {
      "version": 1,
      "layers": [
        {"in": 2, "out": 2, "activation": "leaky_relu", "slope": 0.2,
         "weights": [[...], [...]], "bias": [...]},
        ...
      ]
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from numerics import as_vec, make_rng, spectral_norm

MODEL_FORMAT_VERSION = 1
ACTIVATIONS = ("identity", "relu", "leaky_relu", "tanh")
DEFAULT_SLOPE = 0.2
BIAS_SCALE = 0.05


class GeneratorError(ValueError):
    pass


class StaleCacheError(GeneratorError):
    pass


class ModelFormatError(GeneratorError):
    def __init__(self, field_name: str, problem: str):
        self.field = field_name
        super().__init__(f"model file: {field_name}: {problem}")


# ---------- TYPES ----------

@dataclass(frozen=True, eq=False)
class Layer:
    weights: np.ndarray          # (out_dim, in_dim)
    bias: np.ndarray             # (out_dim,)
    activation: str = "identity"
    slope: float = DEFAULT_SLOPE  # only used by leaky_relu

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise GeneratorError(f"layer weights must be a non-empty matrix, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise GeneratorError(f"layer bias shape {b.shape} does not match out_dim {w.shape[0]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise GeneratorError("layer weights/bias contain non-finite values")
        if self.activation not in ACTIVATIONS:
            raise GeneratorError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not (0.0 < self.slope < 1.0):
            raise GeneratorError(f"leaky_relu slope must be in (0,1), got {self.slope}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return int(self.weights.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weights.shape[0])

    def act(self, h: np.ndarray) -> np.ndarray:
        if self.activation == "identity":
            return h
        if self.activation == "relu":
            return np.maximum(h, 0.0)
        if self.activation == "leaky_relu":
            return np.where(h >= 0.0, h, self.slope * h)
        return np.tanh(h)

    def act_grad(self, h: np.ndarray) -> np.ndarray:
        # kink at 0 takes the positive-side slope
        if self.activation == "identity":
            return np.ones_like(h)
        if self.activation == "relu":
            return (h >= 0.0).astype(np.float64)
        if self.activation == "leaky_relu":
            return np.where(h >= 0.0, 1.0, self.slope)
        t = np.tanh(h)
        return 1.0 - t * t


@dataclass(frozen=True, eq=False)
class LayeredGenerator:
    layers: Tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise GeneratorError("generator needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise GeneratorError(
                    f"layer {i} in_dim {layers[i].in_dim} != layer {i - 1} out_dim {layers[i - 1].out_dim}"
                )
        object.__setattr__(self, "layers", layers)

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> Tuple[int, ...]:
        return (self.in_dim,) + tuple(layer.out_dim for layer in self.layers)


@dataclass(frozen=True)
class GeneratorSplit:
    prefix: LayeredGenerator
    suffix: LayeredGenerator
    split_index: int

    @property
    def k(self) -> int:
        return self.prefix.in_dim

    @property
    def p(self) -> int:
        return self.prefix.out_dim

    @property
    def n(self) -> int:
        return self.suffix.out_dim


@dataclass(frozen=True)
class LipschitzBounds:
    per_layer: Tuple[float, ...]
    prefix_bound: float = 1.0
    suffix_bound: float = 1.0

    @property
    def total(self) -> float:
        return float(np.prod(self.per_layer))


@dataclass
class ForwardCache:
    layers: Tuple[Layer, ...]
    z: np.ndarray
    pre_activations: List[np.ndarray] = field(default_factory=list)


# ---------- EVALUATION ----------

def forward(g: LayeredGenerator, z) -> Tuple[np.ndarray, ForwardCache]:
    z = as_vec(z, "z")
    if z.shape[0] != g.in_dim:
        raise GeneratorError(f"forward: dim(z)={z.shape[0]} but generator in_dim={g.in_dim}")
    cache = ForwardCache(layers=g.layers, z=z.copy())
    h = z
    for layer in g.layers:
        pre = layer.weights @ h + layer.bias
        cache.pre_activations.append(pre)
        h = layer.act(pre)
    return h, cache


def apply(g: LayeredGenerator, z) -> np.ndarray:
    out, _ = forward(g, z)
    return out


def vjp(g: LayeredGenerator, cache: ForwardCache, cotangent, z=None) -> np.ndarray:
    """J(z)^T cotangent from a forward() cache. Passing `z` also checks the cache was built at that input."""
    if cache.layers is not g.layers or len(cache.pre_activations) != len(g.layers):
        raise StaleCacheError("vjp: cache was not produced by forward() on this generator")
    if z is not None and not np.array_equal(np.asarray(z, dtype=np.float64), cache.z):
        raise StaleCacheError("vjp: cache was built at a different input z")
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != (g.out_dim,):
        raise GeneratorError(f"vjp: cotangent shape {cot.shape} != ({g.out_dim},)")
    for layer, pre in zip(reversed(g.layers), reversed(cache.pre_activations)):
        cot = layer.weights.T @ (cot * layer.act_grad(pre))
    return cot


def split(g: LayeredGenerator, s: int) -> GeneratorSplit:
    if not (1 <= s < len(g)):
        raise GeneratorError(f"split index {s} out of range [1, {len(g) - 1}]")
    return GeneratorSplit(
        prefix=LayeredGenerator(g.layers[:s]),
        suffix=LayeredGenerator(g.layers[s:]),
        split_index=s,
    )


def subgenerator(g: LayeredGenerator, start: int, stop: Optional[int] = None) -> LayeredGenerator:
    stop = len(g) if stop is None else stop
    if not (0 <= start < stop <= len(g)):
        raise GeneratorError(f"subgenerator range [{start}, {stop}) invalid for {len(g)} layers")
    return LayeredGenerator(g.layers[start:stop])


def lipschitz(g: LayeredGenerator, split_index: Optional[int] = None) -> LipschitzBounds:
    """
    Upper bound on the Lipschitz constant: product of per-layer spectral norms.
    With split_index s the bound is also broken into prefix (layers 1..s) and
    suffix (layers s+1..d) products; without it the prefix holds everything.
    """
    per_layer = tuple(spectral_norm(layer.weights)[0] for layer in g.layers)
    s = len(per_layer) if split_index is None else split_index
    if not (0 <= s <= len(per_layer)):
        raise GeneratorError(f"lipschitz: split index {s} out of range")
    return LipschitzBounds(
        per_layer=per_layer,
        prefix_bound=float(np.prod(per_layer[:s])),
        suffix_bound=float(np.prod(per_layer[s:])),
    )


# ---------- SYNTHESIS ----------

def synthesize(
    dims: Sequence[int],
    activations: Union[str, Sequence[str]] = "leaky_relu",
    lipschitz_targets: Union[float, Sequence[float]] = 1.0,
    seed: int = 0,
    slope: float = DEFAULT_SLOPE,
) -> LayeredGenerator:
    """
    Random "trained-like" generator: Gaussian weights rescaled so each layer's
    spectral norm equals its Lipschitz target, small Gaussian biases.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise GeneratorError(f"synthesize: need >= 2 positive dims, got {dims}")
    n_layers = len(dims) - 1
    acts = [activations] * n_layers if isinstance(activations, str) else list(activations)
    targets = (
        [float(lipschitz_targets)] * n_layers
        if isinstance(lipschitz_targets, (int, float))
        else [float(t) for t in lipschitz_targets]
    )
    if len(acts) != n_layers or len(targets) != n_layers:
        raise GeneratorError(
            f"synthesize: {n_layers} layers but {len(acts)} activations / {len(targets)} targets"
        )
    if any(t <= 0 for t in targets):
        raise GeneratorError("synthesize: Lipschitz targets must be positive")

    rng = make_rng(seed)
    layers = []
    for i in range(n_layers):
        w = rng.standard_normal((dims[i + 1], dims[i])) / math.sqrt(dims[i])
        sigma, _ = spectral_norm(w)
        w = w * (targets[i] / sigma)
        b = BIAS_SCALE * rng.standard_normal(dims[i + 1])
        layers.append(Layer(weights=w, bias=b, activation=acts[i], slope=slope))
    return LayeredGenerator(tuple(layers))


# ---------- SERIALIZATION ----------

def to_dict(g: LayeredGenerator) -> Dict[str, Any]:
    rows = []
    for layer in g.layers:
        row: Dict[str, Any] = {
            "in": layer.in_dim,
            "out": layer.out_dim,
            "activation": layer.activation,
        }
        if layer.activation == "leaky_relu":
            row["slope"] = layer.slope
        row["weights"] = layer.weights.tolist()
        row["bias"] = layer.bias.tolist()
        rows.append(row)
    return {"version": MODEL_FORMAT_VERSION, "layers": rows}


def save(g: LayeredGenerator, path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(p.suffix + ".tmp")
    # repr-based float formatting round-trips float64 exactly
    tmp.write_text(json.dumps(to_dict(g), indent=2) + "\n", encoding="utf-8")
    tmp.replace(p)
    return p


def _number_list(values: Any, field_name: str, length: int) -> np.ndarray:
    if not isinstance(values, list) or len(values) != length:
        raise ModelFormatError(field_name, f"expected a list of {length} numbers")
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ModelFormatError(field_name, f"non-numeric entry {v!r}")
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ModelFormatError(field_name, "non-finite entry")
    return arr


def from_dict(data: Any) -> LayeredGenerator:
    if not isinstance(data, dict):
        raise ModelFormatError("<root>", "expected a JSON object")
    version = data.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError("version", f"unsupported version {version!r}")
    rows = data.get("layers")
    if not isinstance(rows, list) or not rows:
        raise ModelFormatError("layers", "expected a non-empty list")

    layers: List[Layer] = []
    prev_out: Optional[int] = None
    for i, row in enumerate(rows):
        tag = f"layers[{i}]"
        if not isinstance(row, dict):
            raise ModelFormatError(tag, "expected an object")
        unknown = set(row) - {"in", "out", "activation", "slope", "weights", "bias"}
        if unknown:
            raise ModelFormatError(f"{tag}.{sorted(unknown)[0]}", "unknown field")
        for key in ("in", "out"):
            val = row.get(key)
            if isinstance(val, bool) or not isinstance(val, int) or val < 1:
                raise ModelFormatError(f"{tag}.{key}", f"expected a positive integer, got {val!r}")
        d_in, d_out = row["in"], row["out"]
        if prev_out is not None and d_in != prev_out:
            raise ModelFormatError(f"{tag}.in", f"{d_in} does not chain with previous out {prev_out}")
        activation = row.get("activation")
        if activation not in ACTIVATIONS:
            raise ModelFormatError(f"{tag}.activation", f"unknown activation {activation!r}")
        slope = row.get("slope", DEFAULT_SLOPE)
        if activation == "leaky_relu":
            if isinstance(slope, bool) or not isinstance(slope, (int, float)) or not (0.0 < slope < 1.0):
                raise ModelFormatError(f"{tag}.slope", f"must be in (0,1), got {slope!r}")
        w_rows = row.get("weights")
        if not isinstance(w_rows, list) or len(w_rows) != d_out:
            raise ModelFormatError(f"{tag}.weights", f"expected {d_out} rows")
        weights = np.vstack(
            [_number_list(r, f"{tag}.weights[{j}]", d_in) for j, r in enumerate(w_rows)]
        )
        bias = _number_list(row.get("bias"), f"{tag}.bias", d_out)
        layers.append(Layer(weights=weights, bias=bias, activation=activation, slope=float(slope)))
        prev_out = d_out
    return LayeredGenerator(tuple(layers))


def load(path: Union[str, Path]) -> LayeredGenerator:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"model file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelFormatError("<root>", f"invalid JSON ({e})") from e
    return from_dict(data)

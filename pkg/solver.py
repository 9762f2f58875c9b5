#!/usr/bin/env python3
"""
solver.py

CSGM baseline and Intermediate Layer Optimization (ILO).

CSGM (phase 0):
    z_hat^k = argmin_{z in B2^k(r1)} ||A G(z) - y||^2        PGD, restarts

ILO, one split G = G2 o G1, repeated `rounds` times:
    z_tilde^p = argmin_{z^p in z_hat^p + B1^p(r2)} ||A G2(z^p) - y||^2
    z_hat^k   = argmin_{z^k in B2^k(r1)} ||G1(z^k) - z_tilde^p||^2   (range projection)
    z_hat^p   = G1(z_hat^k)

Multi-split ILO walks the split indices in order. At split i the "input" code
is the best intermediate code of split i-1, its feasible set is the l1 ball it
was found in, and the new anchor is that code pushed forward through the layers
between the two splits. The returned signal is the suffix output of the best
code seen anywhere.

Every evaluated iterate is recorded in one loss trace; the best loss is a
running minimum, so it never increases across phases.

SNA (sna_sigma > 0, matched to the measurement noise level) acts in the
intermediate-layer phases only: the loss sees G2(z^p) + sna_sigma * eps with
fresh eps per step, and an iterate whose clean loss falls below the noise
floor m * sna_sigma^2 is recorded but never becomes the best (a residual under
the floor is fitted noise). The CSGM phase is always noise-free.

Optimizer: Adam (0.9, 0.999, 1e-8) or plain GD, learning rate ramped up
linearly over the first 10% of steps then cosine-decayed. Projection happens
after every optimizer step; Adam moments are not reset by it.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from generator import GeneratorSplit, LayeredGenerator, apply, forward, split, subgenerator, vjp
from numerics import as_vec, derive_seed, make_rng, randn
from operators import MeasurementOperator
from projections import BallSpec, project_ball, project_sphere
from report_utils import log

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WARMUP_FRACTION = 0.1
FEAS_ATOL = 1e-9
DEFAULT_RADIUS_SCALE = 0.1   # r2 = 0.1 * sqrt(p) per layer


class SolverError(ValueError):
    pass


# ---------- CONFIG ----------

@dataclass
class LayerConfig:
    steps: int = 100
    lr_max: float = 0.1
    radius: float = 0.0        # r2; ignored for the CSGM entry
    ball_norm: str = "l1"      # "l1" | "l2"

    def __post_init__(self):
        if self.steps < 0:
            raise SolverError(f"layer steps must be >= 0, got {self.steps}")
        if self.lr_max < 0:
            raise SolverError(f"layer lr_max must be >= 0, got {self.lr_max}")
        if self.radius < 0:
            raise SolverError(f"layer radius must be >= 0, got {self.radius}")
        if self.ball_norm not in ("l1", "l2"):
            raise SolverError(f"layer ball_norm must be l1 or l2, got {self.ball_norm!r}")


@dataclass
class SolverConfig:
    per_layer: List[LayerConfig]
    input_radius: float = 1.0
    rounds: int = 1
    range_projection_steps: int = 200
    range_lr: float = 0.05
    restarts: int = 1
    sna_sigma: float = 0.0
    seed: int = 0
    optimizer: str = "adam"           # "adam" | "gd"
    input_constraint: str = "ball"    # "ball" | "sphere"

    def __post_init__(self):
        self.per_layer = [
            lc if isinstance(lc, LayerConfig) else LayerConfig(**lc) for lc in self.per_layer
        ]
        if not self.per_layer:
            raise SolverError("per_layer needs at least the CSGM entry")
        if self.input_radius <= 0:
            raise SolverError(f"input_radius must be > 0, got {self.input_radius}")
        if self.rounds < 0 or self.range_projection_steps < 0:
            raise SolverError("rounds and range_projection_steps must be >= 0")
        if self.restarts < 1:
            raise SolverError(f"restarts must be >= 1, got {self.restarts}")
        if self.sna_sigma < 0:
            raise SolverError(f"sna_sigma must be >= 0, got {self.sna_sigma}")
        if self.optimizer not in ("adam", "gd"):
            raise SolverError(f"optimizer must be adam or gd, got {self.optimizer!r}")
        if self.input_constraint not in ("ball", "sphere"):
            raise SolverError(f"input_constraint must be ball or sphere, got {self.input_constraint!r}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def default_solver_config(
    g: LayeredGenerator,
    split_indices: Sequence[int] = (),
    steps: int = 200,
    lr_max: float = 0.1,
    **overrides,
) -> SolverConfig:
    """One CSGM entry plus one entry per split with r2 = 0.1 * sqrt(p)."""
    dims = g.dims
    per_layer = [LayerConfig(steps=steps, lr_max=lr_max)]
    for s in split_indices:
        per_layer.append(
            LayerConfig(steps=steps, lr_max=lr_max, radius=DEFAULT_RADIUS_SCALE * math.sqrt(dims[s]))
        )
    return SolverConfig(per_layer=per_layer, **overrides)


# ---------- STATE / REPORTS ----------

@dataclass
class LatentState:
    z_k: np.ndarray               # current input code z_hat^k
    z_p_anchor: np.ndarray        # z_hat^p = G1(z_hat^k)
    z_p: np.ndarray               # latest intermediate solution z_tilde^p
    best_z_p: np.ndarray
    best_loss: float
    domain: BallSpec              # feasible set of z_k
    on_sphere: bool = False       # z_k lives on the sphere of radius domain.radius
    best_center: Optional[np.ndarray] = None   # anchor of the ball best_z_p was found in


@dataclass
class Trace:
    losses: List[float] = field(default_factory=list)
    running_best: List[float] = field(default_factory=list)
    phases: List[Dict[str, Any]] = field(default_factory=list)
    steps: int = 0

    @property
    def best(self) -> float:
        return self.running_best[-1] if self.running_best else math.inf

    def mark(self, phase: str) -> None:
        self.phases.append({"phase": phase, "start": len(self.losses)})

    def record(self, loss: float, eligible: bool = True) -> None:
        prev = self.best
        self.losses.append(float(loss))
        self.running_best.append(min(prev, float(loss)) if eligible else prev)


@dataclass
class RecoveryReport:
    method: str
    loss_trace: List[float]
    running_best: List[float]
    phases: List[Dict[str, Any]]
    best_loss: float
    meas_mse: float
    steps_total: int
    seconds: float
    seed: int
    config: Dict[str, Any]
    estimate: List[float]
    true_mse: Optional[float] = None
    psnr: Optional[float] = None
    restart_losses: List[float] = field(default_factory=list)
    split_indices: List[int] = field(default_factory=list)


def true_mse(x, x_hat) -> float:
    d = np.asarray(x, dtype=np.float64) - np.asarray(x_hat, dtype=np.float64)
    return float(d @ d) / d.shape[0]


def psnr(x, x_hat, peak: float = 1.0) -> Optional[float]:
    mse = true_mse(x, x_hat)
    if mse == 0.0:
        return None
    return 10.0 * math.log10(peak * peak / mse)


def report_to_dict(report: RecoveryReport) -> Dict[str, Any]:
    return asdict(report)


# ---------- OPTIMIZERS ----------

class Adam:
    def __init__(self, dim: int, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return x - lr * m_hat / (np.sqrt(v_hat) + self.eps)


class GradientDescent:
    def __init__(self, dim: int):
        self.dim = dim

    def step(self, x: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        return x - lr * grad


def make_optimizer(name: str, dim: int):
    if name == "adam":
        return Adam(dim)
    if name == "gd":
        return GradientDescent(dim)
    raise SolverError(f"unknown optimizer {name!r}")


def lr_schedule(step: int, total_steps: int, lr_max: float) -> float:
    """
    Linear ramp to lr_max over the first ceil(10%) of the steps (step 0 already
    gets one increment), then lr_max * 0.5 * (1 + cos(pi * progress)).
    """
    if total_steps < 1 or not (0 <= step < total_steps):
        raise SolverError(f"lr_schedule: need 0 <= step < total_steps, got {step}/{total_steps}")
    ramp = max(1, int(math.ceil(WARMUP_FRACTION * total_steps)))
    if step < ramp:
        return lr_max * (step + 1) / ramp
    progress = (step - ramp + 1) / (total_steps - ramp + 1)
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------- LOSSES ----------

def measurement_loss(
    g: LayeredGenerator,
    z,
    op: MeasurementOperator,
    y,
    sna_sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, np.ndarray]:
    """
    ||A (G(z) + sna_sigma * eps) - y||^2 and its gradient in z.

    eps is drawn fresh on every call (Stochastic Noise Addition); it does not
    depend on z so the gradient 2 J^T A^T r is exact for the sampled eps.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (op.m,):
        raise SolverError(f"measurement_loss: y shape {y.shape} != ({op.m},)")
    if g.out_dim != op.n:
        raise SolverError(f"measurement_loss: generator out_dim {g.out_dim} != operator n {op.n}")
    x, cache = forward(g, z)
    if sna_sigma > 0:
        if rng is None:
            raise SolverError("measurement_loss: sna_sigma > 0 needs an rng")
        x = x + randn(rng, x.shape[0], sna_sigma)
    r = op.apply(x) - y
    loss = float(r @ r)
    grad = 2.0 * vjp(g, cache, op.adjoint(r), z)
    return loss, grad


def _clean_loss(g: LayeredGenerator, z: np.ndarray, op: MeasurementOperator, y: np.ndarray) -> float:
    r = op.apply(apply(g, z)) - y
    return float(r @ r)


def noise_floor(op: MeasurementOperator, sna_sigma: float) -> float:
    """Expected ||A x - y||^2 at the true x under N(0, sna_sigma^2) measurement noise."""
    return op.m * sna_sigma * sna_sigma


def _evaluate(g, z, op, y, sna_sigma, rng) -> Tuple[float, np.ndarray]:
    """(noise-free loss for bookkeeping, gradient of the possibly noisy loss)."""
    loss, grad = measurement_loss(g, z, op, y, sna_sigma, rng)
    if sna_sigma > 0:
        loss = _clean_loss(g, z, op, y)
    return loss, grad


def _pgd(
    g: LayeredGenerator,
    z0: np.ndarray,
    op: MeasurementOperator,
    y: np.ndarray,
    layer_cfg: LayerConfig,
    project: Callable[[np.ndarray], np.ndarray],
    feasible: Callable[[np.ndarray], bool],
    config: SolverConfig,
    rng: np.random.Generator,
    trace: Trace,
    sna_sigma: float = 0.0,
) -> Tuple[np.ndarray, float]:
    """
    Projected gradient descent on the measurement loss; returns the best
    iterate at or above the noise floor (inf loss when there is none).
    """
    floor = noise_floor(op, sna_sigma)
    z = z0.copy()
    opt = make_optimizer(config.optimizer, z.shape[0])
    best_z, best_loss = z.copy(), math.inf
    steps = layer_cfg.steps
    for t in range(steps):
        loss, grad = _evaluate(g, z, op, y, sna_sigma, rng)
        trace.record(loss, loss >= floor)
        if floor <= loss < best_loss:
            best_z, best_loss = z.copy(), loss
        z = project(opt.step(z, grad, lr_schedule(t, steps, layer_cfg.lr_max)))
        trace.steps += 1
        if not feasible(z):
            raise SolverError("PGD iterate left the feasible set")
    loss = _clean_loss(g, z, op, y)
    trace.record(loss, loss >= floor)
    if floor <= loss < best_loss:
        best_z, best_loss = z.copy(), loss
    return best_z, best_loss


def _input_projector(state_domain: BallSpec, on_sphere: bool):
    if on_sphere:
        radius = state_domain.radius

        def project(v):
            return project_sphere(v, radius)

        def feasible(v):
            return abs(float(np.linalg.norm(v)) - radius) <= FEAS_ATOL * max(1.0, radius)

        return project, feasible

    def project(v):
        return project_ball(v, state_domain)

    def feasible(v):
        return state_domain.contains(v, atol=FEAS_ATOL)

    return project, feasible


def project_input(z, radius: float, constraint: str = "ball") -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if constraint == "sphere":
        return project_sphere(z, radius)
    return project_ball(z, BallSpec(np.zeros(z.shape[0]), radius, "l2"))


# ---------- CSGM ----------

def csgm_solve(
    g: LayeredGenerator,
    op: MeasurementOperator,
    y,
    config: SolverConfig,
    init=None,
    x_true=None,
) -> Tuple[np.ndarray, RecoveryReport]:
    """
    PGD over z^k in B2^k(r1) (or the sphere) from `restarts` initializations;
    restart 0 starts at `init` when given, the rest at N(0, I_k) draws.
    Returns the best iterate of the restart with the lowest measurement loss.
    sna_sigma is not used here.
    """
    started = time.perf_counter()
    y = as_vec(y, "y")
    if g.out_dim != op.n or y.shape[0] != op.m:
        raise SolverError(
            f"csgm_solve: generator out_dim {g.out_dim}, operator {op.m}x{op.n}, y dim {y.shape[0]} do not chain"
        )
    cfg0 = config.per_layer[0]
    k = g.in_dim
    domain = BallSpec(np.zeros(k), config.input_radius, "l2")
    on_sphere = config.input_constraint == "sphere"
    project, feasible = _input_projector(domain, on_sphere)

    chosen: Optional[Tuple[float, np.ndarray, Trace]] = None
    restart_losses: List[float] = []
    steps_total = 0
    for r in range(config.restarts):
        rng = make_rng(derive_seed(config.seed, "csgm", r))
        if init is not None and r == 0:
            z0 = as_vec(init, "init").copy()
            if z0.shape[0] != k:
                raise SolverError(f"csgm_solve: init dim {z0.shape[0]} != k {k}")
        else:
            z0 = randn(rng, k)
        z0 = project_input(z0, config.input_radius, config.input_constraint)
        trace = Trace()
        trace.mark("csgm")
        best_z, best_loss = _pgd(g, z0, op, y, cfg0, project, feasible, config, rng, trace)
        steps_total += trace.steps
        restart_losses.append(best_loss)
        if chosen is None or best_loss < chosen[0]:
            chosen = (best_loss, best_z, trace)

    best_loss, z_k, trace = chosen
    trace.steps = steps_total
    x_hat = apply(g, z_k)
    report = _build_report("csgm", trace, x_hat, op, config, started, x_true)
    report.restart_losses = restart_losses
    log(f"csgm: best loss {best_loss:.6g} over {config.restarts} restart(s)", tag="solver")
    return z_k, report


def _build_report(method, trace, x_hat, op, config, started, x_true, split_indices=()) -> RecoveryReport:
    report = RecoveryReport(
        method=method,
        loss_trace=list(trace.losses),
        running_best=list(trace.running_best),
        phases=[dict(p) for p in trace.phases],
        best_loss=trace.best,
        meas_mse=trace.best / op.m,
        steps_total=trace.steps,
        seconds=time.perf_counter() - started,
        seed=config.seed,
        config=config.to_dict(),
        estimate=x_hat.tolist(),
        split_indices=list(split_indices),
    )
    if x_true is not None:
        report.true_mse = true_mse(x_true, x_hat)
        report.psnr = psnr(x_true, x_hat)
    return report


# ---------- ILO ----------

def range_projection(
    prefix: LayeredGenerator,
    z_init,
    target,
    domain: BallSpec,
    steps: int,
    lr_max: float,
    optimizer: str = "adam",
    on_sphere: bool = False,
) -> Tuple[np.ndarray, float]:
    """
    argmin over the domain of ||G1(z) - target||^2 by PGD from z_init.
    Returns (best z, ||G1(z) - target||).
    """
    project, feasible = _input_projector(domain, on_sphere)
    target = np.asarray(target, dtype=np.float64)
    z = project(as_vec(z_init, "z_init").copy())
    opt = make_optimizer(optimizer, z.shape[0])
    best_z, best_loss = z.copy(), math.inf
    for t in range(steps):
        out, cache = forward(prefix, z)
        r = out - target
        loss = float(r @ r)
        if loss < best_loss:
            best_z, best_loss = z.copy(), loss
        grad = 2.0 * vjp(prefix, cache, r, z)
        z = project(opt.step(z, grad, lr_schedule(t, steps, lr_max)))
        if not feasible(z):
            raise SolverError("range projection iterate left the feasible set")
    r = apply(prefix, z) - target
    loss = float(r @ r)
    if loss < best_loss:
        best_z, best_loss = z.copy(), loss
    return best_z, math.sqrt(best_loss)


def ilo_round(
    sp: GeneratorSplit,
    state: LatentState,
    op: MeasurementOperator,
    y,
    layer_cfg: LayerConfig,
    rounds: int,
    config: SolverConfig,
    rng: Optional[np.random.Generator] = None,
    trace: Optional[Trace] = None,
) -> LatentState:
    if state.z_k.shape != (sp.k,) or state.z_p_anchor.shape != (sp.p,):
        raise SolverError(
            f"ilo_round: state dims ({state.z_k.shape[0]}, {state.z_p_anchor.shape[0]}) "
            f"do not match split ({sp.k}, {sp.p})"
        )
    if rounds == 0:
        return state
    y = as_vec(y, "y")
    rng = rng if rng is not None else make_rng(derive_seed(config.seed, "ilo", sp.split_index))
    trace = trace if trace is not None else Trace()
    floor = noise_floor(op, config.sna_sigma)
    state = replace(
        state,
        z_k=state.z_k.copy(),
        z_p_anchor=state.z_p_anchor.copy(),
        z_p=state.z_p.copy(),
        best_z_p=state.best_z_p.copy(),
        best_center=state.z_p_anchor.copy() if state.best_center is None else state.best_center,
    )

    for _ in range(rounds):
        ball = BallSpec(state.z_p_anchor, layer_cfg.radius, layer_cfg.ball_norm)

        def project(v, ball=ball):
            return project_ball(v, ball)

        def feasible(v, ball=ball):
            return ball.contains(v, atol=FEAS_ATOL)

        z_tilde, loss_tilde = _pgd(
            sp.suffix, state.z_p_anchor, op, y, layer_cfg, project, feasible, config, rng, trace,
            sna_sigma=config.sna_sigma,
        )
        state.z_p = z_tilde
        if loss_tilde < state.best_loss:
            state.best_z_p, state.best_loss = z_tilde.copy(), loss_tilde
            state.best_center = state.z_p_anchor.copy()

        z_k, _ = range_projection(
            sp.prefix,
            state.z_k,
            z_tilde,
            state.domain,
            config.range_projection_steps,
            config.range_lr,
            config.optimizer,
            state.on_sphere,
        )
        trace.steps += config.range_projection_steps
        anchor = apply(sp.prefix, z_k)
        loss_anchor = _clean_loss(sp.suffix, anchor, op, y)
        eligible = loss_anchor >= floor
        trace.record(loss_anchor, eligible)
        if eligible and loss_anchor < state.best_loss:
            state.best_z_p, state.best_loss = anchor.copy(), loss_anchor
            state.best_center = anchor.copy()
        state.z_k, state.z_p_anchor = z_k, anchor
    return state


def check_splits(
    g: LayeredGenerator, split_indices: Sequence[int], config: Optional[SolverConfig] = None
) -> List[int]:
    splits = [int(s) for s in split_indices]
    for a, b in zip(splits, splits[1:]):
        if b <= a:
            raise SolverError(f"split indices must be strictly increasing, got {splits}")
    if splits and not (1 <= splits[0] and splits[-1] < len(g)):
        raise SolverError(f"split indices must lie in [1, {len(g) - 1}], got {splits}")
    if config is not None and len(config.per_layer) != len(splits) + 1:
        raise SolverError(
            f"per_layer has {len(config.per_layer)} entries, need {len(splits) + 1} (CSGM + one per split)"
        )
    return splits


def ilo_solve(
    g: LayeredGenerator,
    split_indices: Sequence[int],
    op: MeasurementOperator,
    y,
    config: SolverConfig,
    x_true=None,
    init=None,
) -> Tuple[np.ndarray, RecoveryReport]:
    started = time.perf_counter()
    splits = check_splits(g, split_indices, config)
    y = as_vec(y, "y")

    z_k, csgm_report = csgm_solve(g, op, y, config, init=init)
    trace = Trace(
        losses=list(csgm_report.loss_trace),
        running_best=list(csgm_report.running_best),
        phases=[dict(p) for p in csgm_report.phases],
        steps=csgm_report.steps_total,
    )

    code = z_k
    domain = BallSpec(np.zeros(g.in_dim), config.input_radius, "l2")
    on_sphere = config.input_constraint == "sphere"
    best_loss = csgm_report.best_loss
    prev = 0
    for i, s in enumerate(splits):
        layer_cfg = config.per_layer[i + 1]
        sp = split(subgenerator(g, prev), s - prev)
        anchor = apply(sp.prefix, code)
        state = LatentState(
            z_k=code,
            z_p_anchor=anchor,
            z_p=anchor.copy(),
            best_z_p=anchor.copy(),
            best_loss=best_loss,
            domain=domain,
            on_sphere=on_sphere,
            best_center=anchor.copy(),
        )
        trace.mark(f"split_{s}")
        rng = make_rng(derive_seed(config.seed, "ilo", s))
        state = ilo_round(sp, state, op, y, layer_cfg, config.rounds, config, rng, trace)
        log(f"ilo: split {s} (p={sp.p}) best loss {state.best_loss:.6g}", tag="solver")

        best_loss = state.best_loss
        code = state.best_z_p
        domain = BallSpec(state.best_center, layer_cfg.radius, layer_cfg.ball_norm)
        on_sphere = False
        prev = s

    x_hat = apply(subgenerator(g, prev), code) if splits else apply(g, code)
    report = _build_report("ilo", trace, x_hat, op, config, started, x_true, splits)
    report.restart_losses = list(csgm_report.restart_losses)
    return x_hat, report

#!/usr/bin/env python3
"""
ilo_cli.py

Command-line surface:

    gen-model     synthesize a layered generator and write it as JSON
    solve         plant one signal, measure it, recover it with csgm or ilo
    bench         paired CSGM-vs-ILO trials over an m (or keep_prob) sweep -> CSV
    theory-table  covering bounds / measurement counts / chain bounds -> CSV
    srec-test     Monte-Carlo S-REC certification of an operator ensemble -> JSON

Flags: --config <path>  --out <path>  --seed <u64>  --method {csgm,ilo}  --quiet
Exit codes: 0 ok, 2 config error or missing input file, 3 anything else.

Environment (.env is loaded): ILO_LOG_FILE, ILO_QUIET, ILO_BENCH_WORKERS, ILO_OUT_DIR.
"""

import argparse
import itertools
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from experiment_config import (
    ConfigError,
    ExperimentConfig,
    GenModelConfig,
    ModelSpec,
    SolverSpec,
    SrecConfig,
    SynthSpec,
    TheoryGridConfig,
    BoundGrid,
    ComplexityGrid,
    config_echo,
    load_config,
    sub_seed,
)
from generator import (
    GeneratorError,
    LayeredGenerator,
    ModelFormatError,
    apply,
    lipschitz,
    load,
    save,
    split,
    synthesize,
)
from numerics import derive_seed, make_rng
from operators import (
    MeasurementOperator,
    NoiseSpec,
    OperatorError,
    build_operator,
    make_identity,
    sense,
    to_descriptor,
)
from report_utils import (
    BENCH_COLUMNS,
    BOUND_COLUMNS,
    COMPLEXITY_COLUMNS,
    bench_summary,
    log,
    out_dir,
    set_quiet,
    write_csv,
    write_json,
)
from solver import (
    DEFAULT_RADIUS_SCALE,
    LayerConfig,
    SolverConfig,
    SolverError,
    check_splits,
    csgm_solve,
    default_solver_config,
    ilo_solve,
    report_to_dict,
)
from theory import (
    Plant,
    TheoryError,
    TheoryParams,
    additive_error_term,
    bound_table,
    chain_bound_table,
    complexity_table,
    extended_range_sampler,
    plant,
    sample_complexity,
    sample_complexity_circulant,
    srec_distribution,
    suggest_params,
    uniform_ball,
)

load_dotenv()

DEFAULT_DIMS = [8, 16, 32, 64, 128]
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


# ---------- BUILDERS ----------

@contextmanager
def config_stage(what: str):
    """Domain errors raised while turning a config into objects are config errors."""
    try:
        yield
    except ModelFormatError:
        raise
    except (GeneratorError, OperatorError, SolverError, TheoryError) as e:
        raise ConfigError(f"{what}: {e}") from e


def build_model(spec: ModelSpec, top_seed: int) -> LayeredGenerator:
    if spec.path is not None:
        return load(spec.path)
    s = spec.synth
    with config_stage("model.synth"):
        return synthesize(
            s.dims, s.activations, s.lipschitz_targets, seed=sub_seed(top_seed, s.seed, "model"), slope=s.slope,
        )


def build_solver_config(spec: SolverSpec, g: LayeredGenerator, top_seed: int) -> SolverConfig:
    common = dict(
        input_radius=spec.input_radius,
        rounds=spec.rounds,
        range_projection_steps=spec.range_projection_steps,
        range_lr=spec.range_lr,
        restarts=spec.restarts,
        sna_sigma=spec.sna_sigma,
        seed=sub_seed(top_seed, spec.seed, "solver"),
        optimizer=spec.optimizer,
        input_constraint=spec.input_constraint,
    )
    with config_stage("solver"):
        check_splits(g, spec.split_indices)
        if spec.per_layer is None:
            cfg = default_solver_config(g, spec.split_indices, steps=spec.steps, lr_max=spec.lr_max, **common)
        else:
            cfg = SolverConfig(per_layer=[LayerConfig(**lc.model_dump()) for lc in spec.per_layer], **common)
        check_splits(g, spec.split_indices, cfg)
    return cfg


def operator_descriptor(cfg: ExperimentConfig, n: int, trial: int, value: Optional[float] = None) -> Dict[str, Any]:
    spec = cfg.operator
    params = dict(spec.params)
    m = spec.m
    if value is not None:
        if cfg.sweep.parameter == "m":
            m = int(value)
        else:
            params = {k: v for k, v in params.items() if k != "observed"}
            params["keep_prob"] = float(value)
    if spec.kind in ("gaussian", "circulant_signed") and m is None:
        raise ConfigError(f"operator kind {spec.kind!r} needs 'm'")
    desc = {
        "kind": spec.kind,
        "n": n,
        "params": params,
        "seed": derive_seed(sub_seed(cfg.seed, spec.seed, "operator"), trial),
    }
    if m is not None:
        desc["m"] = m
    return desc


def _plant_split(cfg: ExperimentConfig, g: LayeredGenerator) -> int:
    if cfg.plant.split_index is not None:
        return cfg.plant.split_index
    if cfg.solver.split_indices:
        return cfg.solver.split_indices[0]
    return max(1, len(g) // 2)


def plant_instance(cfg: ExperimentConfig, g: LayeredGenerator, solver_cfg: SolverConfig, trial: int) -> Plant:
    rng = make_rng(derive_seed(sub_seed(cfg.seed, cfg.plant.seed, "plant"), trial))
    if len(g) < 2:
        if cfg.plant.kind == "extended_range":
            raise ConfigError("extended_range plants need a generator with >= 2 layers")
        z = uniform_ball(rng, g.in_dim, solver_cfg.input_radius)
        return Plant(x=apply(g, z), z=z, v=np.zeros(0), split_index=0)
    s = _plant_split(cfg, g)
    if not (1 <= s < len(g)):
        raise ConfigError(f"plant.split_index {s} out of range [1, {len(g) - 1}]")
    r2 = 0.0
    if cfg.plant.kind == "extended_range":
        if cfg.plant.r2 is not None:
            r2 = cfg.plant.r2
        elif s in cfg.solver.split_indices:
            r2 = solver_cfg.per_layer[cfg.solver.split_indices.index(s) + 1].radius
        else:
            r2 = DEFAULT_RADIUS_SCALE * math.sqrt(g.dims[s])
    return plant(g, s, solver_cfg.input_radius, r2, cfg.plant.sparsity, cfg.plant.l1_fraction, rng)


def measure(cfg: ExperimentConfig, desc: Dict[str, Any], x: np.ndarray, trial: int) -> Tuple[MeasurementOperator, np.ndarray]:
    with config_stage("operator"):
        op = build_operator(desc)
    noise = NoiseSpec(sigma=cfg.noise.sigma, clip=cfg.noise.clip)
    rng = make_rng(derive_seed(sub_seed(cfg.seed, cfg.noise.seed, "noise"), trial))
    return op, sense(op, x, noise, rng)


def run_method(method: str, g, splits, op, y, solver_cfg, x_true):
    if method == "csgm":
        z, report = csgm_solve(g, op, y, solver_cfg, x_true=x_true)
        return apply(g, z), report
    return ilo_solve(g, splits, op, y, solver_cfg, x_true=x_true)


def _plant_echo(pl: Plant) -> Dict[str, Any]:
    return {"split_index": pl.split_index, "in_range": pl.in_range, "z": pl.z, "v": pl.v}


# ---------- COMMANDS ----------

def cmd_gen_model(args) -> int:
    if args.config:
        cfg = load_config(args.config, GenModelConfig)
    else:
        cfg = GenModelConfig(synth=SynthSpec(dims=DEFAULT_DIMS))
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    g = build_model(ModelSpec(synth=cfg.synth), cfg.seed)
    path = Path(args.out or cfg.output or out_dir() / "model.json")
    save(g, path)
    bounds = lipschitz(g)
    for i, L in enumerate(bounds.per_layer):
        log(f"layer {i}: {g.dims[i]} -> {g.dims[i + 1]}  lipschitz <= {L:.6f}", tag="gen-model")
    log(f"wrote {path} (total lipschitz <= {bounds.total:.6f})", tag="gen-model")
    return EXIT_OK


def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config, ExperimentConfig)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def cmd_solve(args) -> int:
    cfg = _load_experiment(args)
    method = args.method or cfg.method
    g = build_model(cfg.model, cfg.seed)
    solver_cfg = build_solver_config(cfg.solver, g, cfg.seed)
    pl = plant_instance(cfg, g, solver_cfg, trial=0)
    desc = operator_descriptor(cfg, g.out_dim, trial=0)
    op, y = measure(cfg, desc, pl.x, trial=0)

    log(f"solve: method={method} m={op.m} n={op.n} splits={cfg.solver.split_indices}", tag="solve")
    _, report = run_method(method, g, cfg.solver.split_indices, op, y, solver_cfg, pl.x)
    path = Path(args.out or cfg.output or out_dir() / "report.json")
    write_json(path, {
        "schema_version": cfg.schema_version,
        "experiment": config_echo(cfg),
        "operator": to_descriptor(op),
        "plant": _plant_echo(pl),
        "report": report_to_dict(report),
    })
    log(f"wrote {path}: best loss {report.best_loss:.6g}, true_mse {report.true_mse:.6g}", tag="solve")
    return EXIT_OK


def _bench_trial(cfg, g, solver_cfg, value, trial) -> List[Dict[str, Any]]:
    pl = plant_instance(cfg, g, solver_cfg, trial)
    desc = operator_descriptor(cfg, g.out_dim, trial, value if cfg.sweep is not None else None)
    op, y = measure(cfg, desc, pl.x, trial)
    trial_cfg = replace(solver_cfg, seed=derive_seed(solver_cfg.seed, trial))
    splits = cfg.solver.split_indices
    p = g.dims[splits[0]] if splits else None

    rows = []
    for method in ("csgm", "ilo"):
        _, report = run_method(method, g, splits, op, y, trial_cfg, pl.x)
        rows.append({
            "trial": trial,
            "method": method,
            "value": value,
            "m": op.m,
            "k": g.in_dim,
            "p": p,
            "n": op.n,
            "true_mse": report.true_mse,
            "meas_mse": report.meas_mse,
            "steps_total": report.steps_total,
            "seconds": report.seconds,
            "seed": trial_cfg.seed,
        })
    log(
        f"bench: value={value} trial={trial} csgm={rows[0]['true_mse']:.4g} ilo={rows[1]['true_mse']:.4g}",
        tag="bench",
    )
    return rows


def cmd_bench(args) -> int:
    cfg = _load_experiment(args)
    g = build_model(cfg.model, cfg.seed)
    solver_cfg = build_solver_config(cfg.solver, g, cfg.seed)
    if cfg.sweep is not None:
        values = list(cfg.sweep.values)
    else:
        values = [float(cfg.operator.m if cfg.operator.m is not None else g.out_dim)]
    jobs = list(itertools.product(values, range(cfg.trials)))
    workers = max(1, int(os.getenv("ILO_BENCH_WORKERS", "1")))

    if workers == 1:
        chunks = [_bench_trial(cfg, g, solver_cfg, v, t) for v, t in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda job: _bench_trial(cfg, g, solver_cfg, *job), jobs))

    rows = pd.DataFrame([r for chunk in chunks for r in chunk], columns=BENCH_COLUMNS)
    rows = rows.sort_values(["m", "value", "trial", "method"], kind="mergesort").reset_index(drop=True)
    path = Path(args.out or cfg.output or out_dir() / "bench.csv")
    write_csv(path, rows, BENCH_COLUMNS)
    summary_path = path.with_name(f"{path.stem}_summary.csv")
    write_csv(summary_path, bench_summary(rows))
    log(f"wrote {path} ({len(rows)} rows) and {summary_path}", tag="bench")
    return EXIT_OK


def _complexity_params(grid: ComplexityGrid) -> List[TheoryParams]:
    params = []
    for K, gamma, delta in itertools.product(grid.K, grid.gamma, grid.delta):
        try:
            params.append(TheoryParams(
                k=grid.k, p=grid.p, n=grid.n if grid.n is not None else grid.p,
                K=K, delta=delta, gamma=gamma, r1=grid.r1, L1=grid.L1, L2=grid.L2, C=grid.C,
            ))
        except TheoryError as e:
            raise ConfigError(f"complexity grid point (K={K}, gamma={gamma}, delta={delta}): {e}") from e
    return params


def cmd_theory(args) -> int:
    if args.config:
        cfg = load_config(args.config, TheoryGridConfig)
    else:
        cfg = TheoryGridConfig(
            bounds=BoundGrid(d=[16, 64, 256], r=[1.0], delta=[0.05, 0.1, 0.25, 0.5, 1.0]),
            complexity=ComplexityGrid(k=8, p=32, n=128, K=[1.5, 2.0, 2.83, 4.0, 5.65], delta=[0.177]),
        )
    path = Path(args.out or cfg.output or out_dir() / "theory.csv")
    written = []

    if cfg.bounds is not None:
        try:
            df = bound_table(cfg.bounds.d, cfg.bounds.r, cfg.bounds.delta)
        except TheoryError as e:
            raise ConfigError(f"bounds grid: {e}") from e
        written.append(write_csv(path, df, BOUND_COLUMNS))

    if cfg.complexity is not None:
        params = _complexity_params(cfg.complexity)
        target = path if cfg.bounds is None else path.with_name(f"{path.stem}_complexity.csv")
        df = complexity_table(params)
        written.append(write_csv(target, df, COMPLEXITY_COLUMNS + ["m_intermediate_csgm", "floored"]))
        if cfg.chain:
            chains = []
            for tp in params:
                chain = chain_bound_table(tp)
                chain.insert(0, "K", tp.K)
                chain.insert(1, "gamma", tp.gamma)
                chain.insert(2, "delta", tp.delta)
                chains.append(chain)
            written.append(write_csv(path.with_name(f"{path.stem}_chain.csv"), pd.concat(chains, ignore_index=True)))

    for p in written:
        log(f"wrote {p}", tag="theory")
    return EXIT_OK


def cmd_srec(args) -> int:
    cfg = load_config(args.config, SrecConfig)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    g = build_model(cfg.model, cfg.seed)
    if not (1 <= cfg.split_index < len(g)):
        raise ConfigError(f"split_index {cfg.split_index} out of range [1, {len(g) - 1}]")
    sp = split(g, cfg.split_index)
    bounds = lipschitz(g, cfg.split_index)

    suggested = suggest_params(sp.k, sp.p, sp.n, gamma=cfg.gamma, r1=cfg.r1, C=cfg.C)
    try:
        tp = TheoryParams(
            k=sp.k, p=sp.p, n=sp.n,
            K=cfg.K if cfg.K is not None else suggested.K,
            delta=cfg.delta if cfg.delta is not None else suggested.delta,
            gamma=cfg.gamma, r1=cfg.r1,
            L1=max(bounds.prefix_bound, 1e-12), L2=max(bounds.suffix_bound, 1e-12), C=cfg.C,
        )
    except TheoryError as e:
        raise ConfigError(f"srec parameters: {e}") from e

    if cfg.operator == "circulant_signed":
        count = sample_complexity_circulant(tp, sp.n)
    elif cfg.operator == "gaussian":
        count = sample_complexity(tp)
    else:
        count = None
    m = cfg.m if cfg.m is not None else (count.m if count is not None else sp.n)
    if cfg.operator == "circulant_signed" and m > sp.n:
        raise ConfigError(f"circulant_signed needs m <= n={sp.n}, got m={m}")
    op_seed = derive_seed(cfg.seed, "operator")

    def build_op(i: int) -> MeasurementOperator:
        if cfg.operator == "identity":
            return make_identity(sp.n)
        return build_operator({"kind": cfg.operator, "m": m, "n": sp.n, "seed": derive_seed(op_seed, i)})

    def sampler(rng):
        return extended_range_sampler(sp, cfg.r1, tp.r2, rng, sparsity=cfg.sparsity)

    log(f"srec: {cfg.operator} m={m} n={sp.n} k={sp.k} p={sp.p} K={tp.K:.4g} delta={tp.delta:.4g}", tag="srec")
    dist = srec_distribution(build_op, sampler, cfg.gamma, cfg.pairs, cfg.draws,
                             make_rng(derive_seed(cfg.seed, "pairs")))
    path = Path(args.out or cfg.output or out_dir() / "srec.json")
    write_json(path, {
        "schema_version": cfg.schema_version,
        "experiment": config_echo(cfg),
        "theory": {
            "k": tp.k, "p": tp.p, "n": tp.n, "K": tp.K, "delta": tp.delta, "gamma": tp.gamma,
            "r1": tp.r1, "r2": tp.r2, "L1": tp.L1, "L2": tp.L2, "C": tp.C,
            "m_theory": count.m if count is not None else None,
            "m_floored": count.floored if count is not None else False,
            "m_capped": count.capped if count is not None else False,
            "additive_error_term": additive_error_term(tp),
        },
        "operator": {"kind": cfg.operator, "m": m, "n": sp.n},
        "empirical_delta": dist,
        "note": "Monte-Carlo over sampled pairs: a necessary-condition check, not a certificate for all pairs",
    })
    log(f"wrote {path}: median delta {dist['median']:.4g} vs additive term {additive_error_term(tp):.4g}", tag="srec")
    return EXIT_OK


# ---------- ENTRY ----------

COMMANDS = {
    "gen-model": cmd_gen_model,
    "solve": cmd_solve,
    "bench": cmd_bench,
    "theory-table": cmd_theory,
    "srec-test": cmd_srec,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment file")
    common.add_argument("--out", help="output path (default under $ILO_OUT_DIR)")
    common.add_argument("--seed", type=int, help="override the top-level seed")
    common.add_argument("--quiet", action="store_true", help="no console logging")

    parser = argparse.ArgumentParser(prog="ilo_cli", description="Intermediate Layer Optimization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "solve":
            sp.add_argument("--method", choices=["csgm", "ilo"])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.quiet:
        set_quiet(True)
    if args.command in ("solve", "bench", "srec-test") and not args.config:
        print(f"[ilo_cli] ERROR: {args.command} needs --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ModelFormatError, FileNotFoundError) as e:
        print(f"[ilo_cli] ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        print(f"[ilo_cli] ERROR: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())

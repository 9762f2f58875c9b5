import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import experiment_config
import ilo_cli
from generator import lipschitz, load
from report_utils import BENCH_COLUMNS

SMALL_MODEL = {"synth": {"dims": [4, 6, 8, 10]}}
FAST_SOLVER = {"split_indices": [2], "steps": 10, "range_projection_steps": 10, "restarts": 2}


def _write(tmp_path, name, payload):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


def _experiment(**overrides):
    cfg = {
        "schema_version": 1,
        "seed": 3,
        "model": SMALL_MODEL,
        "operator": {"kind": "identity"},
        "plant": {"kind": "in_range"},
        "solver": FAST_SOLVER,
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture(autouse=True)
def _out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("ILO_OUT_DIR", str(tmp_path / "out"))


class TestGenModel:
    def test_default_architecture(self, tmp_path):
        out = tmp_path / "m.json"
        assert ilo_cli.main(["gen-model", "--out", str(out), "--quiet"]) == 0
        g = load(out)
        assert g.dims == (8, 16, 32, 64, 128)
        assert all(0.99 <= L <= 1.01 for L in lipschitz(g).per_layer)

    def test_same_seed_same_file(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        ilo_cli.main(["gen-model", "--out", str(a), "--seed", "5"])
        ilo_cli.main(["gen-model", "--out", str(b), "--seed", "5"])
        assert a.read_bytes() == b.read_bytes()

    def test_single_identity_layer(self, tmp_path):
        cfg = _write(tmp_path, "g.json", {"synth": {"dims": [4, 4], "activations": "identity"}})
        out = tmp_path / "id.json"
        assert ilo_cli.main(["gen-model", "--config", cfg, "--out", str(out)]) == 0
        assert lipschitz(load(out)).total == pytest.approx(1.0, rel=1e-6)

    @pytest.mark.parametrize("synth", [
        {"dims": [4, 0, 8]},
        {"dims": [4, 8], "activations": "gelu"},
        {"dims": [4, 6, 8], "activations": ["relu"]},
        {"dims": [4, 8], "lipschitz_targets": -1.0},
    ])
    def test_invalid_synth_is_config_error(self, tmp_path, synth):
        cfg = _write(tmp_path, "g.json", {"synth": synth})
        assert ilo_cli.main(["gen-model", "--config", cfg, "--out", str(tmp_path / "m.json")]) == 2
        assert not (tmp_path / "m.json").exists()

    def test_default_output_dir(self, tmp_path):
        assert ilo_cli.main(["gen-model"]) == 0
        assert (tmp_path / "out" / "model.json").exists()


class TestSolve:
    def test_writes_report(self, tmp_path):
        cfg = _write(tmp_path, "s.json", _experiment())
        out = tmp_path / "r.json"
        assert ilo_cli.main(["solve", "--config", cfg, "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        report = data["report"]
        assert report["method"] == "ilo"
        assert report["true_mse"] >= 0
        rb = report["running_best"]
        assert all(a >= b for a, b in zip(rb, rb[1:]))
        assert data["operator"]["kind"] == "identity"
        assert data["experiment"]["seed"] == 3

    def test_method_flag(self, tmp_path):
        cfg = _write(tmp_path, "s.json", _experiment())
        out = tmp_path / "r.json"
        assert ilo_cli.main(["solve", "--config", cfg, "--out", str(out), "--method", "csgm"]) == 0
        assert json.loads(out.read_text())["report"]["method"] == "csgm"

    def test_rerun_is_identical_except_timing(self, tmp_path):
        cfg = _write(tmp_path, "s.json", _experiment(
            operator={"kind": "gaussian", "m": 6}, plant={"kind": "extended_range"}, noise={"sigma": 0.01},
        ))
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        ilo_cli.main(["solve", "--config", cfg, "--out", str(a)])
        ilo_cli.main(["solve", "--config", cfg, "--out", str(b)])
        da, db = json.loads(a.read_text()), json.loads(b.read_text())
        da["report"].pop("seconds"), db["report"].pop("seconds")
        assert da == db

    def test_seed_override_changes_plant(self, tmp_path):
        cfg = _write(tmp_path, "s.json", _experiment())
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        ilo_cli.main(["solve", "--config", cfg, "--out", str(a)])
        ilo_cli.main(["solve", "--config", cfg, "--out", str(b), "--seed", "99"])
        assert json.loads(a.read_text())["plant"]["z"] != json.loads(b.read_text())["plant"]["z"]

    def test_missing_model_file(self, tmp_path, capsys):
        missing = tmp_path / "nowhere" / "model.json"
        cfg = _write(tmp_path, "s.json", _experiment(model={"path": str(missing)}))
        assert ilo_cli.main(["solve", "--config", cfg]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = _write(tmp_path, "s.json", _experiment(solver={**FAST_SOLVER, "stepz": 3}))
        assert ilo_cli.main(["solve", "--config", cfg]) == 2
        assert "stepz" in capsys.readouterr().err

    def test_wrong_schema_version(self, tmp_path):
        cfg = _write(tmp_path, "s.json", _experiment(schema_version=2))
        assert ilo_cli.main(["solve", "--config", cfg]) == 2

    def test_missing_config_flag(self):
        assert ilo_cli.main(["solve"]) == 2

    def test_missing_config_file(self, tmp_path):
        assert ilo_cli.main(["solve", "--config", str(tmp_path / "none.json")]) == 2

    def test_downsample_factor_must_divide_n(self, tmp_path, capsys):
        cfg = _write(tmp_path, "s.json", _experiment(operator={"kind": "downsample", "params": {"factor": 3}}))
        assert ilo_cli.main(["solve", "--config", cfg]) == 2
        assert "factor 3" in capsys.readouterr().err

    @pytest.mark.parametrize("splits", [[2, 1], [3], [0], [1, 1]])
    def test_bad_split_indices(self, tmp_path, splits):
        cfg = _write(tmp_path, "s.json", _experiment(solver={**FAST_SOLVER, "split_indices": splits}))
        assert ilo_cli.main(["solve", "--config", cfg]) == 2

    def test_unknown_activation_in_experiment(self, tmp_path):
        cfg = _write(tmp_path, "s.json", _experiment(model={"synth": {"dims": [4, 6], "activations": "gelu"}}))
        assert ilo_cli.main(["solve", "--config", cfg]) == 2

    def test_runtime_error_exit_code(self, tmp_path, capsys, monkeypatch):
        def boom(*args, **kwargs):
            raise RuntimeError("solver blew up")

        monkeypatch.setattr(ilo_cli, "run_method", boom)
        cfg = _write(tmp_path, "s.json", _experiment())
        assert ilo_cli.main(["solve", "--config", cfg]) == 3
        assert "[ilo_cli] ERROR: RuntimeError: solver blew up" in capsys.readouterr().err


class TestBench:
    def test_one_value_one_trial(self, tmp_path):
        cfg = _write(tmp_path, "b.json", _experiment(operator={"kind": "gaussian", "m": 5}))
        out = tmp_path / "bench.csv"
        assert ilo_cli.main(["bench", "--config", cfg, "--out", str(out)]) == 0
        rows = pd.read_csv(out)
        assert list(rows.columns) == BENCH_COLUMNS
        assert len(rows) == 2
        assert sorted(rows["method"]) == ["csgm", "ilo"]
        summary = pd.read_csv(tmp_path / "bench_summary.csv")
        assert len(summary) == 1
        assert 0.0 <= summary.loc[0, "ilo_win_rate"] <= 1.0

    def test_sweep_rows_sorted_and_reproducible(self, tmp_path, monkeypatch):
        cfg = _write(tmp_path, "b.json", _experiment(
            operator={"kind": "gaussian", "m": 5},
            plant={"kind": "extended_range"},
            trials=2,
            sweep={"parameter": "m", "values": [8, 4]},
        ))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert ilo_cli.main(["bench", "--config", cfg, "--out", str(a)]) == 0
        monkeypatch.setenv("ILO_BENCH_WORKERS", "3")
        assert ilo_cli.main(["bench", "--config", cfg, "--out", str(b)]) == 0
        ra, rb = pd.read_csv(a), pd.read_csv(b)
        assert len(ra) == 8
        assert list(ra["m"]) == [4] * 4 + [8] * 4
        pd.testing.assert_frame_equal(ra.drop(columns="seconds"), rb.drop(columns="seconds"))

    def test_keep_prob_sweep(self, tmp_path):
        cfg = _write(tmp_path, "b.json", _experiment(
            operator={"kind": "mask", "params": {"keep_prob": 0.5}},
            sweep={"parameter": "keep_prob", "values": [0.3, 0.9]},
        ))
        out = tmp_path / "bench.csv"
        assert ilo_cli.main(["bench", "--config", cfg, "--out", str(out)]) == 0
        rows = pd.read_csv(out)
        assert set(rows["value"]) == {0.3, 0.9}
        assert rows["m"].between(1, 10).all()


class TestTheoryTable:
    def test_single_point_grid(self, tmp_path):
        cfg = _write(tmp_path, "t.json", {"bounds": {"d": [10], "r": [1.0], "delta": [0.5]}})
        out = tmp_path / "theory.csv"
        assert ilo_cli.main(["theory-table", "--config", cfg, "--out", str(out)]) == 0
        df = pd.read_csv(out)
        assert len(df) == 1
        assert df.loc[0, "bound_maurey"] == pytest.approx(4 * np.log(21))

    def test_complexity_and_chain(self, tmp_path):
        cfg = _write(tmp_path, "t.json", {
            "bounds": {"d": [16], "delta": [0.5, 1.0]},
            "complexity": {"k": 8, "p": 32, "n": 128, "K": [1.5, 2.0, 4.0], "delta": [0.177]},
            "chain": True,
        })
        out = tmp_path / "theory.csv"
        assert ilo_cli.main(["theory-table", "--config", cfg, "--out", str(out)]) == 0
        comp = pd.read_csv(tmp_path / "theory_complexity.csv")
        assert comp["m"].is_monotonic_increasing
        assert comp["additive_error_term"].is_monotonic_decreasing
        chain = pd.read_csv(tmp_path / "theory_chain.csv")
        assert set(chain["K"]) == {1.5, 2.0, 4.0}

    def test_invalid_k_is_config_error(self, tmp_path):
        cfg = _write(tmp_path, "t.json", {"complexity": {"k": 8, "p": 16, "K": [9.0], "delta": [0.1]}})
        assert ilo_cli.main(["theory-table", "--config", cfg]) == 2

    def test_defaults(self, tmp_path):
        assert ilo_cli.main(["theory-table"]) == 0
        assert (tmp_path / "out" / "theory.csv").exists()


class TestSrec:
    def test_identity_gives_zero_deltas(self, tmp_path):
        cfg = _write(tmp_path, "r.json", {
            "model": SMALL_MODEL, "split_index": 2, "operator": "identity",
            "pairs": 10, "draws": 3, "gamma": 0.99,
        })
        out = tmp_path / "srec.json"
        assert ilo_cli.main(["srec-test", "--config", cfg, "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        assert data["empirical_delta"]["deltas"] == [0.0, 0.0, 0.0]
        assert data["theory"]["additive_error_term"] >= 0

    def test_circulant_m_is_capped(self, tmp_path):
        cfg = _write(tmp_path, "r.json", {
            "model": SMALL_MODEL, "split_index": 2, "operator": "circulant_signed", "pairs": 5, "draws": 2,
        })
        out = tmp_path / "srec.json"
        assert ilo_cli.main(["srec-test", "--config", cfg, "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        assert data["operator"]["m"] == 10
        assert data["theory"]["m_capped"]

    def test_bad_split(self, tmp_path):
        cfg = _write(tmp_path, "r.json", {"model": SMALL_MODEL, "split_index": 3})
        assert ilo_cli.main(["srec-test", "--config", cfg]) == 2


SHIPPED = {
    "gen_model.json": "GenModelConfig",
    "solve_ilo.json": "ExperimentConfig",
    "denoise_sna.json": "ExperimentConfig",
    "bench_extended.json": "ExperimentConfig",
    "bench_inpainting.json": "ExperimentConfig",
    "theory_grid.json": "TheoryGridConfig",
    "srec_gaussian.json": "SrecConfig",
    "srec_circulant.json": "SrecConfig",
}


@pytest.mark.parametrize("name,schema", sorted(SHIPPED.items()))
def test_shipped_configs_validate(name, schema):
    root = Path(__file__).resolve().parents[1]
    cfg = experiment_config.load_config(root / "configs" / name, getattr(experiment_config, schema))
    assert cfg.schema_version == 1

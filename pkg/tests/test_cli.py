import csv
import json

import numpy as np
import pytest

from qem import cli
from qem.model_dsl import shipped_model_path
from qem.qem import read_trace_csv


def write_config(path, **entries):
    path.write_text("".join(f"{k} = {v}\n" for k, v in entries.items()))
    return path


@pytest.fixture
def out_env(tmp_path, monkeypatch):
    """Point the output-directory override at a fresh folder."""
    def use(name):
        d = tmp_path / name
        monkeypatch.setenv(cli.OUTPUT_ENV, str(d))
        return d
    return use


class TestValidate:
    def test_shipped_radon(self, capsys):
        assert cli.main(["validate", str(shipped_model_path("radon_full"))]) == 0
        assert "OK" in capsys.readouterr().out

    def test_cycle(self, tmp_path, capsys):
        p = tmp_path / "cyc.qem"
        p.write_text("latent z ~ Gaussian(w, 1)\nlatent w ~ Gaussian(z, 1)\n")
        assert cli.main(["validate", str(p)]) == 1
        assert "cycle" in capsys.readouterr().out

    def test_missing_file(self, tmp_path):
        assert cli.main(["validate", str(tmp_path / "nope.qem")]) == 2


class TestRun:
    def test_single_iteration_gives_one_row(self, tmp_path, out_env):
        out = out_env("one")
        cfg = write_config(tmp_path / "c.cfg", model="conjugate_chain", K=8, iterations=1, timing="false")
        assert cli.main(["run", str(cfg)]) == 0
        rows = list(csv.reader((out / "trace.csv").open()))
        assert len(rows) == 2
        assert rows[0][:5] == ["iter", "lambda", "log_evidence", "predictive_ll", "moment_mse"]
        assert rows[0][-2:] == ["clamp_count", "elapsed_ms"]

    def test_conjugate_chain_moment_mse(self, tmp_path, out_env):
        out = out_env("chain")
        cfg = write_config(tmp_path / "c.cfg", model="conjugate_chain", K=64, iterations=10, seed=3)
        assert cli.main(["run", str(cfg)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert np.isfinite(summary["moment_mse"]) and summary["moment_mse"] < 1e-2
        assert summary["config"]["K"] == 64
        assert summary["total_time_s"] > 0

    def test_repeat_is_byte_identical(self, tmp_path, out_env):
        cfg = write_config(tmp_path / "c.cfg", model="bus_mini", K=6, iterations=4, timing="false",
                           metrics="elbo, predictive_ll")
        texts = []
        for name in ("a", "b"):
            out = out_env(name)
            assert cli.main(["run", str(cfg)]) == 0
            texts.append((out / "trace.csv").read_bytes())
        assert texts[0] == texts[1]

    def test_model_file_with_data(self, tmp_path, out_env):
        oracle_dir = out_env("oracle")
        assert cli.main(["oracle", "radon_linear", "--seed", "2"]) == 0
        out = out_env("run")
        cfg = write_config(tmp_path / "c.cfg", model=oracle_dir / "model.qem", data=oracle_dir / "train.csv",
                           test_data=oracle_dir / "test.csv", K=10, iterations=3)
        assert cli.main(["run", str(cfg)]) == 0
        trace = read_trace_csv((out / "trace.csv").read_text())
        assert all(v is not None for v in trace["predictive_ll"])

    def test_trace_is_loss_free(self, tmp_path, out_env):
        out = out_env("lf")
        cfg = write_config(tmp_path / "c.cfg", model="radon_linear", K=5, iterations=3)
        assert cli.main(["run", str(cfg)]) == 0
        text = (out / "trace.csv").read_text()
        parsed = read_trace_csv(text)
        summary = json.loads((out / "summary.json").read_text())
        assert parsed["log_evidence"][-1] == summary["final_log_evidence"]
        final = np.asarray(summary["final_first_moments"]["StateMean"])
        np.testing.assert_array_equal([parsed[f"StateMean[{i}]"][-1] for i in range(final.size)], final)

    @pytest.mark.parametrize("entries,code", [
        ({"model": "conjugate_chain", "method": "vi"}, 2),
        ({"model": "conjugate_chain", "K": "many"}, 2),
        ({"model": "conjugate_chain", "colour": "red"}, 2),
        ({"model": "missing.qem", "data": "x.csv"}, 2),
        ({"model": "conjugate_chain", "K": 4, "iterations": 2, "ema_mode": "fixed", "ema_new_weight": 0}, 1),
    ])
    def test_bad_configs(self, tmp_path, out_env, entries, code):
        out_env("bad")
        assert cli.main(["run", str(write_config(tmp_path / "c.cfg", **entries))]) == code

    def test_engine_error_reports_iteration(self, tmp_path, out_env, monkeypatch, capsys):
        from qem import mpiw_engine
        from qem.errors import NumericalError

        def broken(*args, **kwargs):
            raise NumericalError("all weights are zero")

        out_env("err")
        monkeypatch.setattr(mpiw_engine, "posterior_moments", broken)
        cfg = write_config(tmp_path / "c.cfg", model="conjugate_chain", K=4, iterations=3)
        assert cli.main(["run", str(cfg)]) == 1
        assert "iteration 1" in capsys.readouterr().err


class TestSweep:
    def test_five_seeds_stderr(self, tmp_path, out_env):
        out = out_env("sweep5")
        cfg = write_config(tmp_path / "s.cfg", model="conjugate_chain", K=6, iterations=3,
                           seed="0, 1, 2, 3, 4", timing="false")
        assert cli.main(["sweep", str(cfg), "--workers", "1"]) == 0
        agg = list(csv.DictReader((out / "aggregate.csv").open()))
        assert len(agg) == 3
        for it in range(3):
            values = [read_trace_csv((out / "cells" / f"qem_K6_seed{s}" / "trace.csv").read_text())
                      ["log_evidence"][it] for s in range(5)]
            assert float(agg[it]["log_evidence_mean"]) == pytest.approx(np.mean(values), rel=1e-12)
            assert float(agg[it]["log_evidence_stderr"]) == pytest.approx(np.std(values, ddof=1) / np.sqrt(5),
                                                                         rel=1e-12)

    def test_one_seed_has_zero_stderr(self, tmp_path, out_env):
        out = out_env("sweep1")
        cfg = write_config(tmp_path / "s.cfg", model="conjugate_chain", K=6, iterations=2, method="qem, global_iw")
        assert cli.main(["sweep", str(cfg), "--workers", "1"]) == 0
        agg = list(csv.DictReader((out / "aggregate.csv").open()))
        assert {r["method"] for r in agg} == {"qem", "global_iw"}
        assert all(float(r["log_evidence_stderr"]) == 0.0 for r in agg)

    def test_concurrent_matches_serial(self, tmp_path, out_env):
        cfg = write_config(tmp_path / "s.cfg", model="radon_linear", K=4, iterations=3, seed="0, 1",
                           method="qem, mpiw_fixed", timing="false")
        outs = []
        for name, workers in (("serial", "1"), ("pool", "2")):
            out = out_env(name)
            assert cli.main(["sweep", str(cfg), "--workers", workers]) == 0
            outs.append(out)
        files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
        assert len(files) == 5
        for f in files:
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()

    def test_failed_cell_is_recorded_and_sweep_continues(self, tmp_path, out_env, monkeypatch):
        from qem.errors import NumericalError
        real = cli.execute

        def flaky(cfg, out_dir):
            if cfg.seed == 1:
                raise NumericalError("synthetic failure")
            return real(cfg, out_dir)

        monkeypatch.setattr(cli, "execute", flaky)
        out = out_env("flaky")
        cfg = write_config(tmp_path / "s.cfg", model="conjugate_chain", K=4, iterations=2, seed="0, 1, 2")
        assert cli.main(["sweep", str(cfg), "--workers", "1"]) == 1
        failures = json.loads((out / "failures.json").read_text())
        assert list(failures) == ["qem_K4_seed1"]
        assert (out / "cells" / "qem_K4_seed2" / "trace.csv").is_file()


class TestOracle:
    def test_conjugate_chain(self, out_env, capsys):
        out = out_env("o")
        assert cli.main(["oracle", "conjugate_chain", "--seed", "1"]) == 0
        report = json.loads((out / "oracle.json").read_text())
        assert np.isfinite(report["exact"]["log_evidence"])
        assert (out / "train.csv").is_file() and (out / "model.qem").is_file()
        assert cli.main(["validate", str(out / "model.qem")]) == 0

    def test_no_exact_posterior(self, out_env, capsys):
        out = out_env("o2")
        assert cli.main(["oracle", "bus_mini"]) == 0
        assert json.loads((out / "oracle.json").read_text())["exact"] is None

    def test_bad_size(self, out_env):
        out_env("o3")
        assert cli.main(["oracle", "radon_linear", "--sizes", "Q=3"]) == 2

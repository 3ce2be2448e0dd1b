import json
import os
import subprocess
import sys

import numpy as np
import pytest

from afts.cli import (
    PricePanel,
    chronological_split,
    cidr_transform,
    gen_synthetic_prices,
    index_returns,
    load_price_csv,
    main,
    resolve_config,
    save_price_csv,
)
from afts.errors import DataError
from afts.func_core import load_panel_binary


def run_cli(args):
    return subprocess.run(
        [sys.executable, "-m", "afts.cli"] + [str(a) for a in args],
        capture_output=True,
        text=True,
    )


def tree_bytes(root, skip_names=(), mask_seconds=()):
    """Map of relative path -> bytes; optionally mask a CSV's seconds column."""
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            rel = os.path.relpath(path, root)
            if name in skip_names:
                continue
            data = open(path, "rb").read()
            if name in mask_seconds:
                lines = data.decode().splitlines()
                cols = lines[0].split(",")
                idx = cols.index("seconds")
                body = [lines[0]]
                for line in lines[1:]:
                    parts = line.split(",")
                    parts[idx] = "X"
                    body.append(",".join(parts))
                data = "\n".join(body).encode()
            out[rel] = data
    return out


class TestCidr:
    def make_prices(self, values):
        values = np.asarray(values, dtype=float)
        return PricePanel(
            dates=[f"d{t}" for t in range(values.shape[0])],
            tickers=[f"T{j}" for j in range(values.shape[1])],
            minutes=np.arange(values.shape[2]),
            prices=values,
        )

    def test_constant_prices_zero_curves(self):
        prices = self.make_prices(np.full((3, 2, 10), 50.0))
        panel = cidr_transform(prices)
        assert np.all(panel.data == 0.0)

    def test_formula_value(self):
        vals = np.full((1, 1, 5), 100.0)
        vals[0, 0, 3] = 101.0
        panel = cidr_transform(self.make_prices(vals))
        assert panel.data[0, 0, 3] == pytest.approx(100.0 * np.log(1.01), abs=1e-12)

    def test_curves_start_at_exact_zero(self):
        prices = gen_synthetic_prices(days=6, tickers=3, minutes=30, seed=4)
        panel = cidr_transform(prices, n_cut=25)
        assert np.all(panel.data[:, :, 0] == 0.0)

    def test_nonpositive_price_identified(self):
        vals = np.full((2, 2, 4), 10.0)
        vals[1, 0, 2] = -1.0
        with pytest.raises(DataError) as err:
            cidr_transform(self.make_prices(vals))
        assert "day=1" in str(err.value) and "ticker=0" in str(err.value)

    def test_minute_cutoff(self):
        prices = gen_synthetic_prices(days=4, tickers=2, minutes=40, seed=5)
        panel = cidr_transform(prices, n_cut=30)
        assert panel.data.shape[2] == 30

    def test_price_csv_round_trip(self, tmp_path):
        prices = gen_synthetic_prices(days=3, tickers=2, minutes=8, seed=6)
        save_price_csv(prices, tmp_path / "p.csv")
        back = load_price_csv(tmp_path / "p.csv")
        assert back.tickers == sorted(prices.tickers)
        for j, tk in enumerate(prices.tickers):
            k = back.tickers.index(tk)
            assert np.array_equal(back.prices[:, k, :], prices.prices[:, j, :])

    def test_index_returns(self):
        vals = np.full((2, 1, 3), 100.0)
        vals[:, 0, 2] = 102.0
        prices = self.make_prices(vals)
        rets = index_returns(prices, "T0")
        assert rets[0] == pytest.approx(100.0 * np.log(1.02))


class TestSplits:
    def test_split_fractions(self):
        tr, va, te = chronological_split(251)
        assert tr.size == 171 and va.size == 40 and te.size == 40

    def test_split_order_never_shuffles(self):
        tr, va, te = chronological_split(100)
        assert tr.max() < va.min() <= va.max() < te.min()
        assert np.all(np.diff(np.concatenate([tr, va, te])) == 1)


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"out": "x", "bogus_key": 1}))
        res = run_cli(["simulate", "--config", cfg])
        assert res.returncode == 2
        payload = json.loads(res.stderr.strip().splitlines()[-1])
        assert payload["error"] == "config"

    def test_toml_config(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(
            f'out = "{tmp_path}/sim"\nmodel = "sflr"\nn = 30\np = 4\nseed = 3\n'
        )
        res = run_cli(["simulate", "--config", cfg])
        assert res.returncode == 0, res.stderr

    def test_parse_error_exit_code(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        res = run_cli(["simulate", "--config", cfg])
        assert res.returncode == 2

    def test_missing_out_rejected(self):
        res = run_cli(["simulate", "--n", "10"])
        assert res.returncode == 2

    def test_manifest_round_trip(self, tmp_path):
        out = tmp_path / "sim"
        res = run_cli(
            ["simulate", "--model", "sflr", "--n", "30", "--p", "4", "--seed", "3",
             "--out", out]
        )
        assert res.returncode == 0, res.stderr
        manifest = json.loads((out / "run_manifest.json").read_text())
        cfg_path = tmp_path / "replay.json"
        cfg_path.write_text(json.dumps(manifest["config"]))

        class Args:
            config = str(cfg_path)

        for key in manifest["config"]:
            setattr(Args, key.replace("-", "_"), None)
        replay = resolve_config("simulate", Args)
        assert replay == manifest["config"]

    def test_io_error_exit_code(self, tmp_path):
        res = run_cli(
            ["fit-sflr", "--panel", tmp_path / "missing.bin",
             "--response", tmp_path / "missing.csv", "--out", tmp_path / "o"]
        )
        assert res.returncode == 3

    def test_data_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("wrong,header\n")
        res = run_cli(["cidr", "--prices", bad, "--out", tmp_path / "o"])
        assert res.returncode == 4


@pytest.mark.slow
class TestPipelines:
    def test_simulate_deterministic_bitwise(self, tmp_path):
        # same command, same output path, two runs: identical bytes
        out = tmp_path / "sim"
        outs = []
        for _ in range(2):
            res = run_cli(
                ["simulate", "--model", "sflr", "--n", "40", "--p", "4",
                 "--seed", "11", "--out", out]
            )
            assert res.returncode == 0, res.stderr
            outs.append(tree_bytes(out))
            import shutil

            shutil.rmtree(out)
        assert outs[0] == outs[1]

    def test_price_pipeline_end_to_end(self, tmp_path):
        cidr_cfg = tmp_path / "cidr.json"
        cidr_out = tmp_path / "cidr"
        cidr_cfg.write_text(
            json.dumps(
                {
                    "out": str(cidr_out),
                    "seed": 9,
                    "synthetic": {"days": 80, "tickers": 6, "minutes": 60},
                    "index_ticker": "INDEX",
                    "n_cut": 50,
                }
            )
        )
        assert run_cli(["cidr", "--config", cidr_cfg]).returncode == 0
        panel = load_panel_binary(cidr_out / "cidr_panel.bin")
        assert np.all(panel.data[:, :, 0] == 0.0)

        fit_out = tmp_path / "fit"
        res = run_cli(
            ["fit-sflr", "--panel", cidr_out / "cidr_panel.bin",
             "--response", cidr_out / "response.csv",
             "--L", "2", "--gamma-grid", "8", "--out", fit_out]
        )
        assert res.returncode == 0, res.stderr
        manifest = json.loads((fit_out / "run_manifest.json").read_text())
        split = manifest["split"]
        assert split["train"][1] < split["valid"][0] <= split["valid"][1] < split["test"][0]

        pred_out = tmp_path / "pred"
        res = run_cli(
            ["predict", "--fit", fit_out, "--panel", cidr_out / "cidr_panel.bin",
             "--response", cidr_out / "response.csv", "--range", "test",
             "--out", pred_out]
        )
        assert res.returncode == 0, res.stderr
        summary = json.loads((pred_out / "prediction_summary.json").read_text())
        # mean-baseline error equals the direct computation
        y = np.array(
            [float(line.split(",")[1])
             for line in (cidr_out / "response.csv").read_text().splitlines()[1:]]
        )
        lo, hi = summary["indices"]
        train_hi = split["train"][1]
        direct = 100.0 * np.mean((y[lo : hi + 1] - y[: train_hi + 1].mean()) ** 2)
        assert summary["mean_baseline_mspe_x100"] == pytest.approx(direct, abs=1e-10)

    def test_benchmark_small_cell_schema_and_determinism(self, tmp_path):
        out = tmp_path / "bench"
        outs = []
        for _ in range(2):
            res = run_cli(
                ["benchmark", "--models", "sflr", "--ns", "60", "--ps", "4",
                 "--replicates", "2", "--seed", "13", "--gamma-grid", "6",
                 "--out", out]
            )
            assert res.returncode == 0, res.stderr
            lines = (out / "results.csv").read_text().splitlines()
            assert lines[0] == "model,method,n,p,replicate,rel_error,gamma,seconds"
            assert len(lines) == 5  # 2 replicates x 2 methods
            assert (out / "summary.csv").exists()
            outs.append(tree_bytes(out, mask_seconds=("results.csv",)))
            import shutil

            shutil.rmtree(out)
        assert outs[0] == outs[1]

    def test_fit_vfar_cli(self, tmp_path):
        sim_out = tmp_path / "sim"
        assert run_cli(
            ["simulate", "--model", "vfar", "--n", "50", "--p", "4",
             "--seed", "14", "--out", sim_out]
        ).returncode == 0
        fit_out = tmp_path / "fit"
        res = run_cli(
            ["fit-vfar", "--panel", sim_out / "panel_observed.bin", "--L", "2",
             "--gamma-grid", "5", "--out", fit_out]
        )
        assert res.returncode == 0, res.stderr
        pred_out = tmp_path / "pred"
        res = run_cli(
            ["predict", "--fit", fit_out, "--panel", sim_out / "panel_observed.bin",
             "--range", "test", "--out", pred_out]
        )
        assert res.returncode == 0, res.stderr
        summary = json.loads((pred_out / "prediction_summary.json").read_text())
        assert "score_mspe_x100" in summary

    def test_fit_fflr_cli(self, tmp_path):
        sim_out = tmp_path / "sim"
        assert run_cli(
            ["simulate", "--model", "fflr", "--n", "50", "--p", "4",
             "--seed", "15", "--out", sim_out]
        ).returncode == 0
        fit_out = tmp_path / "fit"
        res = run_cli(
            ["fit-fflr", "--panel", sim_out / "panel_observed.bin",
             "--response-panel", sim_out / "response_panel.bin",
             "--L", "2", "--gamma-grid", "5", "--out", fit_out]
        )
        assert res.returncode == 0, res.stderr
        assert (fit_out / "beta_kernels.csv").exists()

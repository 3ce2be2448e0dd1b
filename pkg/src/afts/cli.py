"""Command-line entry point.

Subcommands: simulate, fit-sflr, fit-fflr, fit-vfar, benchmark, cidr,
predict. Configuration comes from one TOML or JSON file (--config) with
flag overrides; unknown keys are rejected before any computation. Every
command writes deterministic artifacts into its output directory: a run
manifest with the resolved configuration and package version, result CSVs,
and fit directories. Exit codes: 0 success, 2 configuration/parse errors,
3 I/O errors, 4 data errors, 5 computation errors, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, models, sim_bench
from .baseline_cov import fit_cov_sflr
from .errors import (
    AftsError,
    ConfigError,
    ConvergenceError,
    DataError,
    DomainError,
    InfeasibleError,
    StructureError,
)
from .func_core import (
    FunctionalPanel,
    Grid,
    load_panel_binary,
    load_panel_csv,
    save_panel_binary,
    save_panel_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_COMPUTE = 5

# chronological split fractions generalizing the 171/40/40 protocol
SPLIT_TRAIN = 171 / 251
SPLIT_VALID = 40 / 251


def chronological_split(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Train/validation/test index ranges in time order, never shuffled."""
    n_train = int(round(n * SPLIT_TRAIN))
    n_valid = int(round(n * SPLIT_VALID))
    n_train = max(2, min(n_train, n - 2))
    n_valid = max(1, min(n_valid, n - n_train - 1))
    idx = np.arange(n)
    return idx[:n_train], idx[n_train : n_train + n_valid], idx[n_train + n_valid :]


# ---------------------------------------------------------------------------
# Price panels and the cumulative intraday return transform
# ---------------------------------------------------------------------------


@dataclass
class PricePanel:
    """Per-day, per-ticker minute-resolution prices.

    prices[t, j, k] is the price of ticker j at the k-th recorded minute of
    day t; minute index 0 is the opening minute.
    """

    dates: list
    tickers: list
    minutes: np.ndarray
    prices: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.prices.ndim != 3:
            raise StructureError("prices must be (days, tickers, minutes)")
        if not np.all(np.isfinite(self.prices)):
            raise DataError("prices must be finite")


def load_price_csv(path) -> PricePanel:
    """Read the `date,ticker,minute,price` schema into a dense panel."""
    rows = []
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip()
        if header != "date,ticker,minute,price":
            raise DataError(f"unexpected price CSV header: {header!r}")
        for line in fh:
            line = line.strip()
            if line:
                date, ticker, minute, price = line.split(",")
                rows.append((date, ticker, int(minute), float(price)))
    if not rows:
        raise DataError("price CSV contains no rows")
    dates = sorted({r[0] for r in rows})
    tickers = sorted({r[1] for r in rows})
    minutes = np.array(sorted({r[2] for r in rows}))
    d_idx = {d: i for i, d in enumerate(dates)}
    t_idx = {t: i for i, t in enumerate(tickers)}
    m_idx = {int(m): i for i, m in enumerate(minutes)}
    prices = np.full((len(dates), len(tickers), len(minutes)), np.nan)
    for date, ticker, minute, price in rows:
        prices[d_idx[date], t_idx[ticker], m_idx[minute]] = price
    if np.any(np.isnan(prices)):
        raise DataError("price CSV is missing (date, ticker, minute) entries")
    return PricePanel(dates=dates, tickers=tickers, minutes=minutes, prices=prices)


def cidr_transform(prices: PricePanel, n_cut: int | None = None) -> FunctionalPanel:
    """Cumulative intraday return curves, in percent.

    W[t, j, k] = 100 (log P[t, j, k] - log P[t, j, 0]) over the minutes kept
    by the cutoff; every curve starts at exactly zero by construction.
    """
    minutes = prices.minutes
    if n_cut is not None:
        keep = minutes <= minutes[0] + (n_cut - 1)
        if keep.sum() < 2:
            raise DomainError("minute cutoff keeps fewer than two points")
        minutes = minutes[keep]
        vals = prices.prices[:, :, keep]
    else:
        vals = prices.prices
    bad = np.argwhere(vals <= 0)
    if bad.size:
        t, j, k = bad[0]
        raise DataError(
            f"nonpositive price at day={int(t)}, ticker={int(j)}, minute_index={int(k)}"
        )
    logp = np.log(vals)
    curves = 100.0 * (logp - logp[:, :, :1])
    curves[:, :, 0] = 0.0
    grid = Grid.trapezoid(minutes.astype(np.float64))
    return FunctionalPanel(grid, curves)


def index_returns(prices: PricePanel, ticker: str) -> np.ndarray:
    """Full-day intraday return of one ticker, in percent."""
    if ticker not in prices.tickers:
        raise DataError(f"ticker {ticker!r} not present in the price panel")
    j = prices.tickers.index(ticker)
    p = prices.prices[:, j, :]
    if np.any(p <= 0):
        raise DataError(f"nonpositive price for ticker {ticker!r}")
    return 100.0 * (np.log(p[:, -1]) - np.log(p[:, 0]))


def gen_synthetic_prices(
    days: int, tickers: int, minutes: int, seed: int, index_ticker: str = "INDEX"
) -> PricePanel:
    """Geometric random-walk minute prices for end-to-end pipeline tests.

    The index ticker is the average log-price of the components plus its
    own small innovation, so index returns relate to component curves.
    """
    rng = sim_bench.rng_from(seed)
    steps = rng.standard_normal((days, tickers, minutes)) * 8e-4
    steps[:, :, 0] = 0.0
    logp = np.log(100.0) + rng.standard_normal((days, tickers, 1)) * 0.05
    logp = logp + np.cumsum(steps, axis=2)
    idx = logp.mean(axis=1, keepdims=True) + np.cumsum(
        rng.standard_normal((days, 1, minutes)) * 2e-4, axis=2
    )
    names = [f"TK{j:03d}" for j in range(tickers)] + [index_ticker]
    dates = [f"2017-{1 + d // 28:02d}-{1 + d % 28:02d}" for d in range(days)]
    prices = np.exp(np.concatenate([logp, idx], axis=1))
    return PricePanel(
        dates=dates,
        tickers=names,
        minutes=np.arange(minutes),
        prices=prices,
    )


def save_price_csv(panel: PricePanel, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("date,ticker,minute,price\n")
        for t, date in enumerate(panel.dates):
            for j, ticker in enumerate(panel.tickers):
                for k, minute in enumerate(panel.minutes):
                    fh.write(f"{date},{ticker},{int(minute)},{float(panel.prices[t, j, k])!r}\n")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_COMMON_KEYS = {"out", "seed"}
_ALLOWED_KEYS = {
    "simulate": _COMMON_KEYS | {"model", "n", "p", "grid_points", "noise", "format"},
    "fit-sflr": _COMMON_KEYS
    | {
        "panel",
        "response",
        "L",
        "threshold",
        "d_max",
        "gamma",
        "gamma_grid_size",
        "gamma_min_ratio",
        "method",
        "split",
    },
    "fit-fflr": _COMMON_KEYS
    | {
        "panel",
        "response_panel",
        "L",
        "threshold",
        "d_max",
        "gamma",
        "gamma_grid_size",
        "gamma_min_ratio",
        "method",
        "split",
    },
    "fit-vfar": _COMMON_KEYS
    | {
        "panel",
        "L",
        "H",
        "threshold",
        "d_max",
        "gamma",
        "gamma_grid_size",
        "gamma_min_ratio",
        "method",
        "split",
        "jobs",
    },
    "benchmark": _COMMON_KEYS
    | {
        "models",
        "methods",
        "ns",
        "ps",
        "replicates",
        "L",
        "H",
        "threshold",
        "d_max",
        "grid_points",
        "gamma_grid_size",
        "gamma_min_ratio",
        "jobs",
        "practical_solver",
    },
    "cidr": _COMMON_KEYS | {"prices", "n_cut", "index_ticker", "format", "synthetic"},
    "predict": _COMMON_KEYS | {"fit", "panel", "response", "range"},
}


def load_config_file(path) -> dict:
    try:
        raw = open(path, "rb").read()
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}") from err
    name = str(path)
    if name.endswith(".json"):
        try:
            return json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigError(f"config JSON parse error: {err}") from err
    try:
        import tomllib  # Python >= 3.11
    except ImportError:
        import tomli as tomllib
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config TOML parse error: {err}") from err


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Merge config file and flag overrides; reject unknown keys."""
    allowed = _ALLOWED_KEYS[command]
    cfg: dict = {}
    if getattr(args, "config", None):
        file_cfg = load_config_file(args.config)
        unknown = set(file_cfg) - allowed
        if unknown:
            raise ConfigError(
                f"unknown config keys for {command}: {sorted(unknown)}"
            )
        cfg.update(file_cfg)
    for key in allowed:
        flag = key.replace("-", "_")
        if hasattr(args, flag) and getattr(args, flag) is not None:
            cfg[key] = getattr(args, flag)
    return cfg


def write_manifest(outdir, command: str, cfg: dict, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(outdir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _validate_outputs(outdir)


_CSV_HEADERS = {
    "response.csv": "t,y",
    "results.csv": "model,method,n,p,replicate,rel_error,gamma,seconds",
    "summary.csv": "model,method,n,p,q1,median,q3,n_ok,n_fail",
    "prices.csv": "date,ticker,minute,price",
    "coef.csv": "j,row,col,value",
    "bases_eigenvalues.csv": "j,l,lambda",
    "predictions.csv": "t,y_hat",
    "omega_blocks.csv": "j,j_prime,h_prime,row,col,value",
    "beta_kernels.csv": "j,u_index,v_index,value",
}


def _validate_outputs(outdir) -> None:
    """Schema-check every artifact written to the run directory."""
    for name in sorted(os.listdir(outdir)):
        path = os.path.join(outdir, name)
        if not os.path.isfile(path):
            continue
        if name.endswith(".json"):
            with open(path, "r") as fh:
                json.load(fh)
        elif name.endswith(".bin"):
            with open(path, "rb") as fh:
                if fh.read(4) != b"AFTS":
                    raise DataError(f"{name}: bad panel magic")
        elif name in _CSV_HEADERS:
            with open(path, "r") as fh:
                header = fh.readline().strip()
            if header != _CSV_HEADERS[name]:
                raise DataError(f"{name}: unexpected header {header!r}")
        elif name.endswith(".csv"):
            with open(path, "r") as fh:
                if "," not in fh.readline():
                    raise DataError(f"{name}: missing CSV header row")


def _load_panel(path) -> FunctionalPanel:
    if str(path).endswith(".csv"):
        return load_panel_csv(path)
    return load_panel_binary(path)


def _save_panel(panel, path, fmt) -> None:
    if fmt == "csv":
        save_panel_csv(panel, path)
    else:
        save_panel_binary(panel, path)


def _tuned_fit(kind, panel, response, cfg, split=None):
    """Chronological-split tuning used by the fit-* commands."""
    n = panel.n
    tr, va, te = chronological_split(n) if split is None else split
    common = dict(
        threshold=float(cfg.get("threshold", 0.9)),
        d_max=int(cfg.get("d_max", 10)),
        grid_size=int(cfg.get("gamma_grid_size", 30)),
        min_ratio=float(cfg.get("gamma_min_ratio", 1e-3)),
    )
    method = cfg.get("method", "auto")
    sub = lambda p, idx: FunctionalPanel(p.grid, p.data[idx])
    if kind == "sflr":
        res = sim_bench.tune_sflr(
            sub(panel, tr),
            response[tr],
            sub(panel, va),
            response[va],
            method=method,
            L=int(cfg.get("L", 3)),
            **common,
        )
    elif kind == "fflr":
        res = sim_bench.tune_fflr(
            sub(panel, tr),
            sub(response, tr),
            sub(panel, va),
            sub(response, va),
            method=method,
            L=int(cfg.get("L", 3)),
            **common,
        )
    else:
        res = sim_bench.tune_vfar(
            sub(panel, tr),
            sub(panel, va),
            method=method,
            H=int(cfg.get("H", 1)),
            L=int(cfg.get("L", 3)),
            n_jobs=int(cfg.get("jobs", 1)),
            **common,
        )
    return res, (tr, va, te)


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = resolve_config("simulate", args)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    model = cfg.get("model", "sflr")
    n = int(cfg.get("n", 100))
    p = int(cfg.get("p", 40))
    seed = int(cfg.get("seed", 0))
    fmt = cfg.get("format", "bin")
    grid = Grid.uniform(0.0, 1.0, int(cfg.get("grid_points", 101)))
    noise = bool(cfg.get("noise", True))
    out = sim_bench.simulate_dataset(model, n, p, seed, grid=grid, noise=noise)
    ext = "csv" if fmt == "csv" else "bin"
    _save_panel(out.contaminated, os.path.join(outdir, f"panel_observed.{ext}"), fmt)
    _save_panel(out.signal, os.path.join(outdir, f"panel_signal.{ext}"), fmt)
    if model == "sflr":
        with open(os.path.join(outdir, "response.csv"), "w", newline="") as fh:
            fh.write("t,y\n")
            for t, v in enumerate(out.response):
                fh.write(f"{t},{float(v)!r}\n")
        truth = out.truth.beta_values()
        with open(os.path.join(outdir, "beta_true.csv"), "w", newline="") as fh:
            fh.write("u," + ",".join(f"beta_{j}" for j in range(p)) + "\n")
            for g in range(grid.size):
                fh.write(
                    f"{float(grid.points[g])!r},"
                    + ",".join(repr(float(truth[j, g])) for j in range(p))
                    + "\n"
                )
    elif model == "fflr":
        _save_panel(out.response, os.path.join(outdir, f"response_panel.{ext}"), fmt)
    write_manifest(outdir, "simulate", cfg)
    return EXIT_OK


def _read_response_csv(path) -> np.ndarray:
    ys = {}
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip()
        if header != "t,y":
            raise DataError(f"unexpected response CSV header: {header!r}")
        for line in fh:
            line = line.strip()
            if line:
                t, v = line.split(",")
                ys[int(t)] = float(v)
    return np.array([ys[t] for t in range(len(ys))])


def cmd_fit_sflr(args) -> int:
    cfg = resolve_config("fit-sflr", args)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    panel = _load_panel(cfg["panel"])
    y = _read_response_csv(cfg["response"])
    if y.shape[0] != panel.n:
        raise DataError("panel and response lengths differ")
    res, (tr, va, te) = _tuned_fit("sflr", panel, y, cfg)
    fit = res.fit
    if fit is None:
        raise DataError("no usable fit on the tuning grid")
    fit.train_y_mean = float(y[tr].mean())
    models.save_fit(fit, outdir)
    write_manifest(
        outdir,
        "fit-sflr",
        cfg,
        extra={
            "gamma_selected": float(res.gamma),
            "gammas": [float(g) for g in res.gammas],
            "validation_errors": [float(e) for e in res.errors],
            "split": {
                "train": [int(tr[0]), int(tr[-1])],
                "valid": [int(va[0]), int(va[-1])],
                "test": [int(te[0]), int(te[-1])] if te.size else None,
            },
        },
    )
    return EXIT_OK


def cmd_fit_fflr(args) -> int:
    cfg = resolve_config("fit-fflr", args)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    panel = _load_panel(cfg["panel"])
    resp = _load_panel(cfg["response_panel"])
    res, (tr, va, te) = _tuned_fit("fflr", panel, resp, cfg)
    if res.fit is None:
        raise DataError("no usable fit on the tuning grid")
    models.save_fit(res.fit, outdir)
    write_manifest(
        outdir,
        "fit-fflr",
        cfg,
        extra={
            "gamma_selected": float(res.gamma),
            "split": {
                "train": [int(tr[0]), int(tr[-1])],
                "valid": [int(va[0]), int(va[-1])],
                "test": [int(te[0]), int(te[-1])] if te.size else None,
            },
        },
    )
    return EXIT_OK


def cmd_fit_vfar(args) -> int:
    cfg = resolve_config("fit-vfar", args)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    panel = _load_panel(cfg["panel"])
    res, (tr, va, te) = _tuned_fit("vfar", panel, None, cfg)
    models.save_fit(res.fit, outdir)
    write_manifest(
        outdir,
        "fit-vfar",
        cfg,
        extra={
            "gammas_selected": [float(gv) for gv in res.gamma],
            "split": {
                "train": [int(tr[0]), int(tr[-1])],
                "valid": [int(va[0]), int(va[-1])],
                "test": [int(te[0]), int(te[-1])] if te.size else None,
            },
        },
    )
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = resolve_config("benchmark", args)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    from .block_rmd import RmdConfig

    rmd_cfg = None
    if bool(cfg.get("practical_solver", True)):
        rmd_cfg = RmdConfig(feas_tol=1e-5, rel_obj_tol=1e-6, max_iter=2500)
    bench = sim_bench.BenchmarkConfig(
        models=tuple(cfg.get("models", ["sflr", "fflr", "vfar"])),
        methods=tuple(cfg.get("methods", ["auto", "cov"])),
        ns=tuple(int(v) for v in cfg.get("ns", [100, 200, 400])),
        ps=tuple(int(v) for v in cfg.get("ps", [40, 80])),
        replicates=int(cfg.get("replicates", 20)),
        seed=int(cfg.get("seed", 20240)),
        L=int(cfg.get("L", 3)),
        H=int(cfg.get("H", 1)),
        threshold=float(cfg.get("threshold", 0.9)),
        d_max=int(cfg.get("d_max", 10)),
        grid_points=int(cfg.get("grid_points", 101)),
        grid_size=int(cfg.get("gamma_grid_size", 30)),
        min_ratio=float(cfg.get("gamma_min_ratio", 1e-3)),
        n_jobs=int(cfg.get("jobs", 1)),
        rmd_cfg=rmd_cfg,
    )
    rows, failures = sim_bench.run_benchmark(bench)
    sim_bench.write_results_csv(rows, os.path.join(outdir, "results.csv"))
    sim_bench.write_summary_csv(
        sim_bench.summarize(rows, failures), os.path.join(outdir, "summary.csv")
    )
    write_manifest(outdir, "benchmark", cfg, extra={"failures": failures})
    return EXIT_OK


def cmd_cidr(args) -> int:
    cfg = resolve_config("cidr", args)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    fmt = cfg.get("format", "bin")
    if cfg.get("synthetic"):
        synth = cfg["synthetic"]
        panel = gen_synthetic_prices(
            days=int(synth.get("days", 251)),
            tickers=int(synth.get("tickers", 20)),
            minutes=int(synth.get("minutes", 391)),
            seed=int(cfg.get("seed", 0)),
        )
        save_price_csv(panel, os.path.join(outdir, "prices.csv"))
    else:
        panel = load_price_csv(cfg["prices"])
    index_ticker = cfg.get("index_ticker")
    tickers = panel.tickers
    if index_ticker is not None:
        if index_ticker not in tickers:
            raise DataError(f"index ticker {index_ticker!r} not in price data")
        y = index_returns(panel, index_ticker)
        with open(os.path.join(outdir, "response.csv"), "w", newline="") as fh:
            fh.write("t,y\n")
            for t, v in enumerate(y):
                fh.write(f"{t},{float(v)!r}\n")
        keep = [j for j, tk in enumerate(tickers) if tk != index_ticker]
        panel = PricePanel(
            dates=panel.dates,
            tickers=[tickers[j] for j in keep],
            minutes=panel.minutes,
            prices=panel.prices[:, keep, :],
        )
    n_cut = cfg.get("n_cut")
    curves = cidr_transform(panel, None if n_cut is None else int(n_cut))
    ext = "csv" if fmt == "csv" else "bin"
    _save_panel(curves, os.path.join(outdir, f"cidr_panel.{ext}"), fmt)
    write_manifest(
        outdir,
        "cidr",
        cfg,
        extra={"tickers": panel.tickers, "days": len(panel.dates)},
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = resolve_config("predict", args)
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    fit = models.load_fit(cfg["fit"])
    panel = _load_panel(cfg["panel"])
    rng_kind = cfg.get("range", "test")
    with open(os.path.join(cfg["fit"], "run_manifest.json"), "r") as fh:
        fit_manifest = json.load(fh)
    split = fit_manifest.get("split")
    if rng_kind == "all" or split is None:
        idx = np.arange(panel.n)
    else:
        lohi = split[rng_kind]
        if lohi is None:
            raise DataError(f"the fit has no {rng_kind} range recorded")
        idx = np.arange(lohi[0], lohi[1] + 1)
    sub = FunctionalPanel(panel.grid, panel.data[idx])
    result: dict = {"range": rng_kind, "indices": [int(idx[0]), int(idx[-1])]}
    if isinstance(fit, models.SflrFit):
        yhat = models.predict_sflr(fit, sub)
        with open(os.path.join(outdir, "predictions.csv"), "w", newline="") as fh:
            fh.write("t,y_hat\n")
            for t, v in zip(idx, yhat):
                fh.write(f"{int(t)},{float(v)!r}\n")
        if cfg.get("response"):
            y = _read_response_csv(cfg["response"])[idx]
            # MSPE entries are reported x100, matching the usual convention
            result["mspe_x100"] = 100.0 * sim_bench.mspe(y, yhat)
            result["mean_baseline_mspe_x100"] = 100.0 * sim_bench.mspe(
                y, np.full_like(y, fit.train_y_mean)
            )
    elif isinstance(fit, models.FflrFit):
        zeta_hat = models.predict_fflr_scores(fit, sub)
        np.savetxt(
            os.path.join(outdir, "predicted_scores.csv"),
            zeta_hat,
            delimiter=",",
            header=",".join(f"zeta_{m}" for m in range(zeta_hat.shape[1])),
            comments="",
        )
        if cfg.get("response"):
            resp = _load_panel(cfg["response"])
            zeta = models.project_scores(
                FunctionalPanel(resp.grid, resp.data[idx]), [fit.response_basis]
            ).scores
            result["score_mspe_x100"] = 100.0 * sim_bench.mspe(zeta, zeta_hat)
    else:
        scores = models.project_scores(sub, fit.bases).scores
        preds = np.zeros_like(scores)
        for t in range(fit.H, scores.shape[0]):
            preds[t] = models.predict_vfar_scores(fit, scores[:t])
        err = scores[fit.H :] - preds[fit.H :]
        result["score_mspe_x100"] = 100.0 * float(np.mean(err**2))
    with open(os.path.join(outdir, "prediction_summary.json"), "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(outdir, "predict", cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afts",
        description="Autocovariance-based learning for functional time series panels.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML or JSON config file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("simulate", help="generate one benchmark-design dataset")
    common(sp)
    sp.add_argument("--model", choices=["sflr", "fflr", "vfar"])
    sp.add_argument("--n", type=int)
    sp.add_argument("--p", type=int)
    sp.add_argument("--grid-points", dest="grid_points", type=int)
    sp.add_argument("--format", choices=["bin", "csv"])

    for name in ("fit-sflr", "fit-fflr", "fit-vfar"):
        sp = sub.add_parser(name, help=f"tune and fit the {name[4:]} model")
        common(sp)
        sp.add_argument("--panel", help="panel file (.bin or .csv)")
        if name == "fit-sflr":
            sp.add_argument("--response", help="response CSV (t,y)")
        if name == "fit-fflr":
            sp.add_argument(
                "--response-panel", dest="response_panel", help="response panel file"
            )
        if name == "fit-vfar":
            sp.add_argument("--H", type=int)
            sp.add_argument("--jobs", type=int)
        sp.add_argument("--L", type=int)
        sp.add_argument("--threshold", type=float)
        sp.add_argument("--d-max", dest="d_max", type=int)
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--gamma-grid", dest="gamma_grid_size", type=int)
        sp.add_argument("--gamma-min-ratio", dest="gamma_min_ratio", type=float)
        sp.add_argument("--method", choices=["auto", "cov"])

    sp = sub.add_parser("benchmark", help="run the simulation comparison grid")
    common(sp)
    sp.add_argument("--models", nargs="+", choices=["sflr", "fflr", "vfar"])
    sp.add_argument("--methods", nargs="+", choices=["auto", "cov"])
    sp.add_argument("--ns", nargs="+", type=int)
    sp.add_argument("--ps", nargs="+", type=int)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--L", type=int)
    sp.add_argument("--H", type=int)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--grid-points", dest="grid_points", type=int)
    sp.add_argument("--gamma-grid", dest="gamma_grid_size", type=int)
    sp.add_argument("--jobs", type=int)

    sp = sub.add_parser("cidr", help="cumulative intraday return curves from prices")
    common(sp)
    sp.add_argument("--prices", help="price CSV (date,ticker,minute,price)")
    sp.add_argument("--n-cut", dest="n_cut", type=int, help="keep minutes <= cutoff")
    sp.add_argument("--index-ticker", dest="index_ticker")
    sp.add_argument("--format", choices=["bin", "csv"])

    sp = sub.add_parser("predict", help="predict from a saved fit")
    common(sp)
    sp.add_argument("--fit", help="fit directory")
    sp.add_argument("--panel", help="panel file")
    sp.add_argument("--response", help="response file for error reporting")
    sp.add_argument("--range", choices=["train", "valid", "test", "all"])

    return parser


_HANDLERS = {
    "simulate": cmd_simulate,
    "fit-sflr": cmd_fit_sflr,
    "fit-fflr": cmd_fit_fflr,
    "fit-vfar": cmd_fit_vfar,
    "benchmark": cmd_benchmark,
    "cidr": cmd_cidr,
    "predict": cmd_predict,
}


def _fail(code: int, kind: str, err: Exception) -> int:
    payload = {"error": kind, "type": type(err).__name__, "message": str(err)}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg_probe = resolve_config(args.command, args)
        if not cfg_probe.get("out"):
            raise ConfigError("an output directory is required (--out or config 'out')")
        return _HANDLERS[args.command](args)
    except ConfigError as err:
        return _fail(EXIT_CONFIG, "config", err)
    except OSError as err:
        return _fail(EXIT_IO, "io", err)
    except DataError as err:
        return _fail(EXIT_DATA, "data", err)
    except (ConvergenceError, InfeasibleError, DomainError, StructureError) as err:
        return _fail(EXIT_COMPUTE, "compute", err)
    except AftsError as err:
        return _fail(1, "error", err)


if __name__ == "__main__":
    sys.exit(main())

"""Repeated-trial harness: estimator spread, mean and bias, and parameter sweeps."""
from __future__ import annotations

import csv
import json
import math
import multiprocessing
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ellipse import (
    DegenerateDataError,
    InvalidConicError,
    fit_algebraic_ellipse_specific,
    fit_algebraic_trace,
    fit_geometric,
    theta_from_conic,
)
from .estimator import estimate
from .fisher import SingularFisherError, analytic_bounds, crb, fim_numeric
from .gaussian import log_ps_density
from .joint import ConditionalTable, InterferometerConfig, build_table, sample_shots

ESTIMATORS = ("ml", "efs", "etr", "geo")
SWEEP_VARIABLES = ("n_total", "theta", "tau", "m")
CSV_COLUMNS = ("trial", "theta_ml", "sigma_ml", "tau_ml", "theta_efs", "theta_etr", "theta_geo", "excluded_flags")
DEFAULT_TRIALS = 1000
HIST_BINS = 30

# splitmix64 increment (golden-ratio constant) and output mixer
_GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Output number index of the splitmix64 stream started at master_seed."""
    return splitmix64((int(master_seed) + int(index) * _GAMMA) & _MASK)


def trial_seed(master_seed: int, trial_index: int) -> int:
    return derive_seed(master_seed, trial_index)


# column layout of the per-trial record array
_COLS = {"theta_ml": 0, "sigma_ml": 1, "tau_ml": 2, "tau_ml_exact": 3, "theta_efs": 4, "theta_etr": 5, "theta_geo": 6}


def _ellipse_theta(fit) -> float:
    if not fit.converged:
        raise InvalidConicError("fit did not converge")
    return theta_from_conic(fit)


def _one_trial(config, table, m, seed, estimators) -> tuple[np.ndarray, tuple[str, ...]]:
    data = sample_shots(config, table, m, seed)
    row = np.full(len(_COLS), np.nan)
    failed = []
    if "ml" in estimators:
        try:
            est = estimate(data)
            if not est.converged:
                raise ArithmeticError("no convergence")
            row[0:4] = est.theta_est, est.sigma_est, est.tau_est_analytic, est.tau_est_exact
        except (ArithmeticError, ValueError):
            failed.append("ml")
    efs = None
    if "efs" in estimators or "geo" in estimators:
        try:
            efs = fit_algebraic_ellipse_specific(data)
        except (DegenerateDataError, np.linalg.LinAlgError):
            efs = None
    if "efs" in estimators:
        try:
            if efs is None:
                raise DegenerateDataError("no ellipse")
            row[4] = _ellipse_theta(efs)
        except ValueError:
            failed.append("efs")
    if "etr" in estimators:
        try:
            row[5] = _ellipse_theta(fit_algebraic_trace(data))
        except (ValueError, np.linalg.LinAlgError):
            failed.append("etr")
    if "geo" in estimators:
        try:
            if efs is None:
                raise DegenerateDataError("no ellipse start")
            row[6] = _ellipse_theta(fit_geometric(data, init=efs))
        except (ValueError, np.linalg.LinAlgError):
            failed.append("geo")
    return row, tuple(failed)


# state handed to forked workers; set only for the lifetime of one pool
_WORK: dict = {}


def _run_chunk(indices):
    w = _WORK
    return [_one_trial(w["config"], w["table"], w["m"], trial_seed(w["seed"], i), w["estimators"]) for i in indices]


def crb_reference(theta: float, sigma: float, m: int, n1: int, n2: int, tau: float) -> dict:
    """Numeric (quadrature FIM) and small-width analytic bounds for one setting."""
    out = {"analytic": analytic_bounds(sigma, m, n1, n2, tau)}
    try:
        cov = crb(fim_numeric(theta, sigma), m)
        dth, dsg = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
        rad = sigma**2 / (n1 + n2) - 1.0 / (n1 * n2)
        # delta method through the linear width model
        dtau = dsg * sigma / ((n1 + n2) * math.sqrt(rad)) if rad > 0 else math.inf
        out["numeric"] = {"dtheta": dth, "dsigma": dsg, "dtau": dtau}
    except (ValueError, SingularFisherError) as exc:
        out["numeric"] = {"error": str(exc)}
    return out


@dataclass
class TrialStatistics:
    """Per-trial estimates and their summary for one setting."""

    config: InterferometerConfig
    theta_true: float
    m: int
    n_trials: int
    master_seed: int
    estimators: tuple[str, ...]
    records: np.ndarray  # (n_trials, 7) with NaN for excluded entries
    excluded: list[tuple[str, ...]]
    crb: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return self.records[:, _COLS[name]]

    def values(self, name: str) -> np.ndarray:
        """Non-excluded values of one estimate column."""
        v = self.column(name)
        return v[np.isfinite(v)]

    def stats(self, name: str, truth: float) -> dict:
        v = self.values(name)
        n = len(v)
        if n < 2:
            return {"n_used": n, "mean": math.nan, "std": math.nan, "bias": math.nan, "se_mean": math.nan, "se_std": math.nan}
        mean = float(v.mean())
        std = float(v.std(ddof=1))
        return {
            "n_used": n,
            "mean": mean,
            "std": std,
            "bias": mean - truth,
            "se_mean": std / math.sqrt(n),
            "se_std": std / math.sqrt(2 * (n - 1)),
        }

    def std(self, name: str) -> float:
        return self.stats(name, 0.0)["std"]

    def bias(self, name: str) -> float:
        return self.stats(name, self.truth(name))["bias"]

    def truth(self, name: str) -> float:
        if name.startswith("theta"):
            return self.theta_true
        if name.startswith("sigma"):
            return self.config.sigma_true
        return self.config.tau

    def exclusion_counts(self) -> dict:
        return {e: sum(e in f for f in self.excluded) for e in self.estimators}

    def summary(self) -> dict:
        cols = {
            "ml": ("theta_ml", "sigma_ml", "tau_ml", "tau_ml_exact"),
            "efs": ("theta_efs",),
            "etr": ("theta_etr",),
            "geo": ("theta_geo",),
        }
        est = {}
        for e in self.estimators:
            entry = {}
            for c in cols[e]:
                entry[c] = self.stats(c, self.truth(c))
                v = self.values(c)
                if len(v):
                    counts, edges = np.histogram(v, bins=HIST_BINS)
                    entry[c]["histogram"] = {"counts": counts.tolist(), "edges": edges.tolist()}
            est[e] = entry
        return {
            "config": self.config.to_dict(),
            "theta_true": self.theta_true,
            "sigma_true": self.config.sigma_true,
            "m": self.m,
            "n_trials": self.n_trials,
            "master_seed": self.master_seed,
            "estimators": list(self.estimators),
            "excluded": self.exclusion_counts(),
            "statistics": est,
            "crb": self.crb,
        }

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for i, (row, flags) in enumerate(zip(self.records, self.excluded)):
                vals = [row[_COLS[c]] for c in CSV_COLUMNS[1:-1]]
                w.writerow([i, *("nan" if not np.isfinite(x) else repr(float(x)) for x in vals), ";".join(flags) or "none"])
        return path


def _check_estimators(estimators) -> tuple[str, ...]:
    estimators = tuple(estimators)
    if not estimators:
        raise ValueError("estimator set must be nonempty")
    bad = [e for e in estimators if e not in ESTIMATORS]
    if bad:
        raise ValueError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
    # canonical order so the same set always gives the same output
    return tuple(e for e in ESTIMATORS if e in estimators)


def run_trials(
    config: InterferometerConfig,
    m: int,
    n_trials: int = DEFAULT_TRIALS,
    estimators=ESTIMATORS,
    master_seed: int = 0,
    theta_true: float | None = None,
    workers: int = 1,
    table: ConditionalTable | None = None,
    with_crb: bool = True,
) -> TrialStatistics:
    """Sample n_trials data sets and run every estimator on each one.

    All estimators of a trial see the same shots. Results do not depend on
    the worker count; reduction is in trial-index order.
    """
    if m < 1 or n_trials < 1:
        raise ValueError("m and n_trials must be positive")
    estimators = _check_estimators(estimators)
    theta_true = config.theta if theta_true is None else theta_true
    t0 = time.perf_counter()
    table = table if table is not None else build_table(config)
    idx = np.arange(n_trials)
    _WORK.update(config=config, table=table, m=m, seed=master_seed, estimators=estimators)
    try:
        if workers > 1 and n_trials > 1:
            chunks = np.array_split(idx, min(workers * 4, n_trials))
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(workers) as pool:
                parts = pool.map(_run_chunk, chunks)
            out = [r for p in parts for r in p]
        else:
            out = _run_chunk(idx)
    finally:
        _WORK.clear()
    records = np.array([r for r, _ in out])
    excluded = [f for _, f in out]
    ref = crb_reference(theta_true, config.sigma_true, m, config.n1, config.n2, config.tau) if with_crb else {}
    return TrialStatistics(
        config=config,
        theta_true=theta_true,
        m=m,
        n_trials=n_trials,
        master_seed=master_seed,
        estimators=estimators,
        records=records,
        excluded=excluded,
        crb=ref,
        wall_time=time.perf_counter() - t0,
    )


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    n1: int = 1000
    n2: int = 1000
    tau: float = 0.0
    theta: float = 0.5 * math.pi
    m: int = 100
    estimators: tuple[str, ...] = ESTIMATORS
    n_trials: int = DEFAULT_TRIALS
    master_seed: int = 0

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"sweep variable must be one of {SWEEP_VARIABLES}")
        if len(self.values) == 0:
            raise ValueError("sweep values must be nonempty")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "estimators", _check_estimators(self.estimators))

    def point(self, value) -> tuple[InterferometerConfig, int]:
        n1, n2, tau, theta, m = self.n1, self.n2, self.tau, self.theta, self.m
        if self.variable == "n_total":
            n1 = int(value) // 2
            n2 = int(value) - n1
        elif self.variable == "theta":
            theta = float(value)
        elif self.variable == "tau":
            tau = float(value)
        else:
            m = int(value)
        return InterferometerConfig(n1, n2, tau, theta, 0.0), m

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "values": list(self.values),
            "n1": self.n1,
            "n2": self.n2,
            "tau": self.tau,
            "theta": self.theta,
            "m": self.m,
            "estimators": list(self.estimators),
            "n_trials": self.n_trials,
            "master_seed": self.master_seed,
        }


def jsonable(x):
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dump_json(obj, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def _value_tag(value) -> str:
    return f"{value:g}" if isinstance(value, float) else str(value)


def sweep(spec: SweepSpec, out_dir: str | Path | None = None, workers: int = 1, echo: dict | None = None) -> dict:
    """Run one setting per swept value. A failing value is reported and skipped."""
    results: dict = {}
    errors: dict = {}
    for i, value in enumerate(spec.values):
        try:
            config, m = spec.point(value)
            results[value] = run_trials(
                config, m, spec.n_trials, spec.estimators, derive_seed(spec.master_seed, i), workers=workers
            )
        except (ValueError, ArithmeticError, MemoryError) as exc:
            errors[value] = f"{type(exc).__name__}: {exc}"
    if out_dir is not None:
        write_sweep(spec, results, errors, out_dir, echo)
    return {"results": results, "errors": errors}


def write_sweep(spec: SweepSpec, results: dict, errors: dict, out_dir: str | Path, echo: dict | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    points = []
    for i, value in enumerate(spec.values):
        entry = {"value": value, "index": i, "master_seed": derive_seed(spec.master_seed, i)}
        if value in results:
            name = f"trials_{spec.variable}_{_value_tag(value)}.csv"
            files.append(results[value].write_csv(out / name))
            entry.update(results[value].summary(), trials_file=name)
        else:
            entry["error"] = errors.get(value, "not run")
        points.append(entry)
    summary = {
        "version": __version__,
        "sweep": spec.to_dict(),
        "config_echo": echo if echo is not None else spec.to_dict(),
        "points": points,
    }
    files.append(dump_json(summary, out / f"sweep_{spec.variable}.json"))
    return files


def binned_model_tv(config: InterferometerConfig, table: ConditionalTable | None = None, n_gauss: int = 4) -> float:
    """Total-variation distance between the exact joint law and the Gaussian surrogate.

    The surrogate is integrated over the s-space cell of every outcome pair;
    cell edges sit at the midpoints between adjacent z outcomes.
    """
    table = table if table is not None else build_table(config)
    p = table.joint_matrix()
    x, w = np.polynomial.legendre.leggauss(n_gauss)

    def nodes(n):
        z = np.arange(n + 1) * 2.0 / n - 1.0
        edges = np.arcsin(np.concatenate([[-1.0], 0.5 * (z[1:] + z[:-1]), [1.0]]))
        a, b = edges[:-1, None], edges[1:, None]
        return a + 0.5 * (b - a) * (x + 1), 0.5 * (b - a) * w

    n1s, w1 = nodes(config.n1)
    n2s, w2 = nodes(config.n2)
    q = np.zeros_like(p)
    for i in range(n_gauss):
        for j in range(n_gauss):
            dens = np.exp(log_ps_density(n1s[:, i, None], n2s[None, :, j], config.theta, config.sigma_true))
            q += w1[:, i, None] * w2[None, :, j] * dens
    return 0.5 * float(np.abs(p - q).sum())

"""Command-line entry point: simulate, estimate, fisher, benchmark.

Configuration files are flat ``key = value`` text; ``#`` starts a comment,
lists are comma separated and phases accept a ``pi`` suffix (``0.3pi``).
Command-line flags override file values.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import estimate
from .fisher import SingularFisherError, analytic_bounds, crb, fim_numeric
from .joint import ConfigError, InterferometerConfig, build_table, read_shots, sample_shots, write_shots
from .montecarlo import ESTIMATORS, SWEEP_VARIABLES, SweepSpec, dump_json, jsonable, sweep

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_USAGE = 64
EXIT_NUMERIC = 70


class UsageError(Exception):
    pass


def parse_number(text: str) -> float:
    """Float with an optional pi factor: '0.3pi', '0.3*pi', 'pi/2', 'pi'."""
    t = text.strip().replace(" ", "")
    if "pi" not in t:
        return float(t)
    head, _, tail = t.partition("pi")
    head = head.rstrip("*")
    factor = float(head) if head not in ("", "+", "-") else (-1.0 if head == "-" else 1.0)
    if tail:
        if not tail.startswith("/"):
            raise ValueError(f"cannot parse {text!r}")
        factor /= float(tail[1:])
    return factor * math.pi


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _num_list(text: str) -> tuple[float, ...]:
    return tuple(parse_number(s) for s in _str_list(text))


# key -> (parser, default); the resolved set is the run configuration
KEYS: dict = {
    "n1": (_int, 1000),
    "n2": (_int, 1000),
    "tau": (parse_number, 0.0),
    "theta": (parse_number, 0.5 * math.pi),
    "theta2": (parse_number, 0.0),
    "m": (_int, 100),
    "seed": (_int, 0),
    "trials": (_int, 1000),
    "threads": (_int, 1),
    "estimators": (_str_list, ESTIMATORS),
    "sweep_variable": (str, "theta"),
    "sweep_values": (_num_list, ()),
    "k_phi": (_int, 0),
    "sigma": (parse_number, 0.2280),
    "fim_rtol": (parse_number, 1e-6),
    "out": (str, ""),
}
# keys that do not change any result and stay out of the echo
_NOT_ECHOED = ("out", "threads")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(key or "?", f"{source}:{lineno}: expected key = value")
        if key not in KEYS:
            raise ConfigError(key, f"{source}:{lineno}: unknown key")
        try:
            out[key] = KEYS[key][0](value.strip())
        except ValueError as exc:
            raise ConfigError(key, f"{source}:{lineno}: {exc}") from None
    return out


def load_config(path: str | Path) -> dict:
    """Read a key = value file, or reuse the echo stored in a JSON result file."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        echo = doc.get("config_echo")
        if not isinstance(echo, dict):
            raise ConfigError("config", f"{path}: JSON file has no config_echo")
        return {k: _from_echo(k, v) for k, v in echo.items() if k in KEYS}
    return parse_config_text(text, str(path))


def _from_echo(key, value):
    if isinstance(value, list):
        return tuple(value)
    return value


def echo(cfg: dict, keys=None) -> dict:
    keys = KEYS if keys is None else keys
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(cfg.items()) if k in keys and k not in _NOT_ECHOED}


def resolve(args: argparse.Namespace) -> dict:
    cfg = {k: d for k, (_, d) in KEYS.items()}
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for k in args.keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for k in ("m", "trials", "threads"):
        if cfg[k] < 1:
            raise ConfigError(k, f"must be >= 1, got {cfg[k]}")
    if cfg["seed"] < 0:
        raise ConfigError("seed", "must be >= 0")
    if cfg["sweep_variable"] not in SWEEP_VARIABLES:
        raise ConfigError("sweep_variable", f"must be one of {SWEEP_VARIABLES}")
    bad = [e for e in cfg["estimators"] if e not in ESTIMATORS]
    if bad or not cfg["estimators"]:
        raise ConfigError("estimators", f"choose a nonempty subset of {ESTIMATORS}")
    if not cfg["sigma"] > 0:
        raise ConfigError("sigma", "must be > 0")


def interferometer(cfg: dict) -> InterferometerConfig:
    return InterferometerConfig(cfg["n1"], cfg["n2"], cfg["tau"], cfg["theta"], cfg["theta2"])


# -- subcommands -------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = resolve(args)
    config = interferometer(cfg)
    table = build_table(config, cfg["k_phi"] or None)
    data = sample_shots(config, table, cfg["m"], cfg["seed"])
    out = Path(cfg["out"] or "shots.csv")
    csv_path, side = write_shots(data, out, extra={"config_echo": echo(cfg, args.keys)})
    print(f"wrote {csv_path} and {side}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = resolve(args)
    data, warns = read_shots(args.data)
    for w in warns:
        print(f"warning: {w}", file=sys.stderr)
    n1 = args.n1 if args.n1 is not None else data.n1
    n2 = args.n2 if args.n2 is not None else data.n2
    est = estimate(data, n1, n2)
    side = Path(args.data).with_name(Path(args.data).name + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    doc = {
        "version": __version__,
        "estimate": est.to_dict(),
        "n1": n1,
        "n2": n2,
        "m": data.m,
        "seed": data.seed,
        "data_config_echo": meta.get("config_echo"),
        "warnings": warns,
    }
    _emit(doc, cfg["out"])
    return EXIT_OK


def cmd_fisher(args) -> int:
    cfg = resolve(args)
    theta, sigma, m = cfg["theta"], cfg["sigma"], cfg["m"]
    fim = fim_numeric(theta, sigma, rtol=cfg["fim_rtol"])
    cov = crb(fim, m)
    bounds = analytic_bounds(sigma, m, cfg["n1"], cfg["n2"], cfg["tau"])
    doc = {
        "version": __version__,
        "config_echo": echo(cfg, args.keys),
        "fim": fim.to_dict(),
        "crb_covariance": cov.tolist(),
        "dtheta_crb": math.sqrt(cov[0, 0]),
        "dsigma_crb": math.sqrt(cov[1, 1]),
        "dtheta_analytic": bounds["dtheta"],
        "dsigma_analytic": bounds["dsigma"],
        "analytic": bounds,
    }
    _emit(doc, cfg["out"])
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = resolve(args)
    if not cfg["sweep_values"]:
        raise ConfigError("sweep_values", "must be nonempty")
    values = cfg["sweep_values"]
    if cfg["sweep_variable"] in ("n_total", "m"):
        values = tuple(_int(str(v)) for v in values)
    spec = SweepSpec(
        variable=cfg["sweep_variable"],
        values=values,
        n1=cfg["n1"],
        n2=cfg["n2"],
        tau=cfg["tau"],
        theta=cfg["theta"],
        m=cfg["m"],
        estimators=cfg["estimators"],
        n_trials=cfg["trials"],
        master_seed=cfg["seed"],
    )
    for v in spec.values:
        spec.point(v)  # validate every point before any work
    out = Path(cfg["out"] or "results")
    res = sweep(spec, out, workers=cfg["threads"], echo=echo(cfg, args.keys))
    for v, err in res["errors"].items():
        print(f"warning: value {v}: {err}", file=sys.stderr)
    print(f"wrote results to {out}")
    return EXIT_OK


def _emit(doc: dict, out: str) -> None:
    if out:
        dump_json(doc, out)
    else:
        print(json.dumps(jsonable(doc), indent=2, sort_keys=True))


# -- parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_keys(p: argparse.ArgumentParser, keys) -> None:
    p.set_defaults(keys=tuple(keys))
    p.add_argument("--config", help="key = value file or a JSON result file to rerun")
    for k in keys:
        p.add_argument("--" + k.replace("_", "-"), dest=k, type=KEYS[k][0], default=None)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gradml", description="Joint phase and dephasing estimation for differential interferometers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    s = sub.add_parser("simulate", help="sample shots from the exact model")
    _add_keys(s, ("n1", "n2", "tau", "theta", "theta2", "m", "seed", "k_phi", "out"))
    e = sub.add_parser("estimate", help="maximum-likelihood estimate from a shot file")
    e.add_argument("data")
    _add_keys(e, ("n1", "n2", "out"))
    f = sub.add_parser("fisher", help="Fisher matrix and Cramer-Rao bound")
    _add_keys(f, ("theta", "sigma", "m", "n1", "n2", "tau", "fim_rtol", "out"))
    b = sub.add_parser("benchmark", help="Monte Carlo sweep")
    _add_keys(b, ("n1", "n2", "tau", "theta", "m", "seed", "trials", "threads", "estimators", "sweep_variable", "sweep_values", "out"))
    return p


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "fisher": cmd_fisher, "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (SingularFisherError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

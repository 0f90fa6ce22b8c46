"""Shared command-line handling for the sweep scripts."""
import argparse
import math
from pathlib import Path

from gradml.montecarlo import ESTIMATORS, SweepSpec, sweep


def parser(description: str, default_out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=default_out)
    return p


def run(spec: SweepSpec, out: Path, workers: int, columns: tuple[str, ...]) -> None:
    """Run one sweep, write its files and print a compact table."""
    res = sweep(spec, out, workers=workers)
    print(f"\n{spec.variable} sweep -> {out}/sweep_{spec.variable}.json")
    print(f"{'value':>10} " + " ".join(f"{c:>12}" for c in columns) + f" {'crb_theta':>12}")
    for v, r in res["results"].items():
        row = [r.std(c) for c in columns]
        crb = r.crb.get("numeric", {}).get("dtheta", math.nan)
        print(f"{v:>10.4g} " + " ".join(f"{x:12.4e}" for x in row) + f" {crb:12.4e}")
    for v, err in res["errors"].items():
        print(f"{v:>10.4g} failed: {err}")


def std_columns(estimators=ESTIMATORS) -> tuple[str, ...]:
    names = {"ml": "theta_ml", "efs": "theta_efs", "etr": "theta_etr", "geo": "theta_geo"}
    return tuple(names[e] for e in estimators)

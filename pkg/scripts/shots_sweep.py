"""ML against the three ellipse fits versus the number of shots m.

N1 = N2 = 1000, theta = 0.3 pi, tau in {0.005, 0}; all estimators on the
same data in every trial.
"""
import math
from pathlib import Path

from _common import parser, run, std_columns
from gradml.montecarlo import SweepSpec


def main():
    p = parser(__doc__, "results/m_sweep")
    p.add_argument("--m-values", default="20,50,100,300,1000")
    args = p.parse_args()
    ms = tuple(int(v) for v in args.m_values.split(","))
    for tau in (0.005, 0.0):
        spec = SweepSpec("m", ms, tau=tau, theta=0.3 * math.pi, n_trials=args.trials, master_seed=args.seed)
        run(spec, Path(args.out) / f"tau_{tau}", args.workers, std_columns())


if __name__ == "__main__":
    main()

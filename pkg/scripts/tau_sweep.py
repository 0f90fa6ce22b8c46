"""Twisting-strength estimate versus tau at N1 = N2 = 1000, theta = pi/2, m = 100.

The trial CSVs carry the analytic inversion in tau_ml; the JSON summary also
reports the exact-width inversion (tau_ml_exact).
"""
import math
from pathlib import Path

from _common import parser, run
from gradml.montecarlo import SweepSpec


def main():
    args = parser(__doc__, "results/tau_sweep").parse_args()
    spec = SweepSpec("tau", (0.001, 0.0025, 0.005, 0.0075, 0.01), theta=0.5 * math.pi,
                     estimators=("ml",), n_trials=args.trials, master_seed=args.seed)
    run(spec, Path(args.out), args.workers, ("tau_ml", "tau_ml_exact", "sigma_ml"))


if __name__ == "__main__":
    main()

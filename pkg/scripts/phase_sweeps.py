"""Phase uncertainty and bias versus total particle number and versus theta.

Writes sweep_n_total.json and sweep_theta.json (plus per-value trial CSVs)
for tau in {0, 0.005}, ML estimator only.
"""
import math
from pathlib import Path

from _common import parser, run
from gradml.montecarlo import SweepSpec


def main():
    args = parser(__doc__, "results/phase_sweeps").parse_args()
    for tau in (0.0, 0.005):
        base = Path(args.out) / f"tau_{tau}"
        n_spec = SweepSpec("n_total", (200, 500, 1000, 2000, 4000), tau=tau, theta=0.5 * math.pi,
                           estimators=("ml",), n_trials=args.trials, master_seed=args.seed)
        run(n_spec, base, args.workers, ("theta_ml", "sigma_ml"))
        t_spec = SweepSpec("theta", tuple(k * 0.1 * math.pi for k in range(1, 10)), tau=tau,
                           estimators=("ml",), n_trials=args.trials, master_seed=args.seed)
        run(t_spec, base, args.workers, ("theta_ml", "sigma_ml"))


if __name__ == "__main__":
    main()

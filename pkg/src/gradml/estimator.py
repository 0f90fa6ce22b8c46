"""Joint maximum-likelihood estimation of (theta, sigma) and inversion to tau."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize

from .gaussian import _LOG_2PI, _LOG_NORM, _branch_args, _wrap, grad_loglik, hess_loglik, loglik
from .joint import ShotData
from .spin import jy_variance

SIGMA_MIN = 1e-4
SIGMA_MAX = 5.0
GRID_SIZE = 41
GRAD_TOL = 1e-6
# the simplex stage only has to land in the Newton basin; the polish
# then drives the gradient below GRAD_TOL
NM_XATOL = 1e-4


@dataclass
class JointEstimate:
    theta_est: float
    sigma_est: float
    tau_est_analytic: float
    tau_est_exact: float
    log_likelihood_at_max: float
    converged: bool
    clamped_tau: bool
    n_function_evals: int
    grad_norm: float = float("nan")
    degenerate: bool = False
    tau_range_flag: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def sigma_model(n1: int, n2: int, tau: float) -> float:
    """Squared uncorrelated width 1/N1 + 1/N2 + (N1 + N2) tau^2."""
    return 1.0 / n1 + 1.0 / n2 + (n1 + n2) * tau**2


def tau_from_sigma_analytic(sigma_est: float, n1: int, n2: int) -> tuple[float, bool]:
    """Invert the linear width model; returns (tau, clamped)."""
    rad = sigma_est**2 / (n1 + n2) - 1.0 / (n1 * n2)
    if rad < 0:
        # tiny negative values are rounding on the projection-noise floor
        if rad > -1e-15:
            return 0.0, False
        return 0.0, True
    return math.sqrt(rad), False


def sigma_sq_exact(n1: int, n2: int, tau: float) -> float:
    """Width from the J_y variances of both interferometers."""
    return 4.0 / n1**2 * jy_variance(n1, tau) + 4.0 / n2**2 * jy_variance(n2, tau)


def tau_from_sigma_exact(sigma_est: float, n1: int, n2: int, tau_upper: float = math.pi / 4, tol: float = 1e-10) -> tuple[float, bool, bool]:
    """Solve sigma_est^2 = sigma_sq_exact(tau) by bisection.

    Returns (tau, clamped, out_of_range).
    """
    target = sigma_est**2
    lo_val = sigma_sq_exact(n1, n2, 0.0)
    if target <= lo_val:
        return 0.0, target < lo_val * (1 - 1e-12), False
    hi = tau_upper
    if target >= sigma_sq_exact(n1, n2, hi):
        return hi, False, True
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if sigma_sq_exact(n1, n2, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), False, False


def _grid_scan(s1, s2):
    """Coarse 41 x 41 scan of a cheap lower bound of the log-likelihood.

    Per shot only the nearest wrap image of the two closest branches is
    kept; dropping positive terms can only lower the density, so no grid
    value exceeds the exact log-likelihood at that point.
    """
    thetas = np.linspace(0.0, math.pi, GRID_SIZE)
    sigmas = np.geomspace(SIGMA_MIN, SIGMA_MAX, GRID_SIZE)
    chi2 = np.sort(_wrap(_branch_args(s1[None, :], s2[None, :], thetas[:, None])) ** 2, axis=-1)
    d1 = chi2[..., 0].sum(axis=1)  # (theta,)
    gap = chi2[..., 1] - chi2[..., 0]  # (theta, shot)
    inv = 0.5 / sigmas**2  # (sigma,)
    corr = np.log1p(np.exp(-gap[:, :, None] * inv)).sum(axis=1)  # (theta, sigma)
    ll = -d1[:, None] * inv + corr - len(s1) * (np.log(sigmas) + _LOG_NORM + _LOG_2PI)
    # argmax on the theta-major grid returns the smallest theta among ties
    i, j = np.unravel_index(np.argmax(ll), ll.shape)
    return thetas[i], sigmas[j], ll[i, j]


def _clip(theta, sigma):
    return min(max(theta, 0.0), math.pi), min(max(sigma, SIGMA_MIN), SIGMA_MAX)


def _newton_polish(s1, s2, theta, sigma, max_iter=30):
    """Damped Newton steps on the exact log-likelihood; stays inside the box."""
    f = loglik(s1, s2, theta, sigma)
    nev = 1
    for _ in range(max_iter):
        g = grad_loglik(s1, s2, theta, sigma)
        if np.linalg.norm(g) < GRAD_TOL:
            break
        h = hess_loglik(s1, s2, theta, sigma)
        try:
            step = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            break
        if step @ g <= 0:  # not an ascent direction: fall back to gradient
            step = g / (np.abs(np.diag(h)).max() + 1e-300)
        t = 1.0
        improved = False
        while t > 1e-8:
            nt, ns = _clip(theta + t * step[0], sigma + t * step[1])
            nf = loglik(s1, s2, nt, ns)
            nev += 1
            if nf >= f - 1e-12 * abs(f):
                improved = (nt, ns) != (theta, sigma)
                theta, sigma, f = nt, ns, nf
                break
            t *= 0.5
        if not improved:
            break
    return theta, sigma, f, nev


def estimate(data: ShotData, n1: int | None = None, n2: int | None = None) -> JointEstimate:
    """Maximize the surrogate log-likelihood over theta in [0, pi], sigma in [1e-4, 5]."""
    if data.m < 2:
        raise ValueError("need at least two shots")
    n1 = n1 if n1 is not None else data.n1
    n2 = n2 if n2 is not None else data.n2
    s1, s2 = data.s1, data.s2
    degenerate = bool(np.all(s1 == s1[0]) and np.all(s2 == s2[0]))

    theta0, sigma0, _ = _grid_scan(s1, s2)
    nev = GRID_SIZE * GRID_SIZE

    # derivative-free refinement in (theta, log sigma)
    def negll(x):
        t, sg = _clip(x[0], math.exp(x[1]))
        return -loglik(s1, s2, t, sg)

    dt = math.pi / (GRID_SIZE - 1)
    dl = math.log(SIGMA_MAX / SIGMA_MIN) / (GRID_SIZE - 1)
    x0 = np.array([theta0, math.log(sigma0)])
    simplex = np.array([x0, x0 + [0.5 * dt, 0.0], x0 + [0.0, 0.5 * dl]])
    res = minimize(
        negll,
        x0,
        method="Nelder-Mead",
        bounds=[(0.0, math.pi), (math.log(SIGMA_MIN), math.log(SIGMA_MAX))],
        options={"xatol": NM_XATOL, "fatol": 1e-9, "maxiter": 2000, "initial_simplex": simplex},
    )
    nev += res.nfev
    theta, sigma = _clip(res.x[0], math.exp(res.x[1]))
    theta, sigma, f, n_newton = _newton_polish(s1, s2, theta, sigma)
    nev += n_newton

    g = grad_loglik(s1, s2, theta, sigma)
    # at an active bound only the inward component has to vanish
    g_free = g.copy()
    if (theta == 0.0 and g[0] < 0) or (theta == math.pi and g[0] > 0):
        g_free[0] = 0.0
    if (sigma == SIGMA_MIN and g[1] < 0) or (sigma == SIGMA_MAX and g[1] > 0):
        g_free[1] = 0.0
    gnorm = float(np.linalg.norm(g_free))
    converged = gnorm < GRAD_TOL

    tau_a, clamped_a = (0.0, True)
    tau_e, clamped_e, out_of_range = (0.0, True, False)
    if n1 is not None and n2 is not None:
        tau_a, clamped_a = tau_from_sigma_analytic(sigma, n1, n2)
        tau_e, clamped_e, out_of_range = tau_from_sigma_exact(sigma, n1, n2)
    return JointEstimate(
        theta_est=float(theta),
        sigma_est=float(sigma),
        tau_est_analytic=float(tau_a),
        tau_est_exact=float(tau_e),
        log_likelihood_at_max=float(f),
        converged=converged,
        clamped_tau=bool(clamped_a or clamped_e),
        n_function_evals=int(nev),
        grad_norm=float(np.linalg.norm(g)),
        degenerate=degenerate,
        tau_range_flag=bool(out_of_range),
    )

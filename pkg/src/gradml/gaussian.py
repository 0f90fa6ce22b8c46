"""Classical surrogate: wrapped-Gaussian uncorrelated noise on arcsine variables.

With s_j = arcsin(z_j) the shot density is

    P_s(s1, s2 | theta, sigma) = (1/2pi) [P(theta - s1 + s2) + P(theta + pi - s1 - s2)
                                         + P(theta - pi + s1 + s2) + P(theta + s1 - s2)]

with P the 2pi-wrapped Gaussian of width sigma. Everything is evaluated in log
space (log-sum-exp over branches and images), so densities far from the
rectangle ridges never underflow to log(0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .joint import ShotData

TWO_PI = 2 * math.pi
_LOG_NORM = 0.5 * math.log(2 * math.pi)
_LOG_2PI = math.log(2 * math.pi)


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianModelParams:
    theta: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        if not 0 <= self.theta <= math.pi:
            raise DomainError(f"theta must lie in [0, pi], got {self.theta}")


def n_images(sigma: float) -> int:
    """Images per side so that the omitted wrap terms are below 1e-14 of the sum."""
    if sigma <= 0.5:
        return 1
    return 1 + math.ceil(9.0 * sigma / TWO_PI)


def _wrap(x):
    return x - TWO_PI * np.floor((x + math.pi) / TWO_PI)


def _images(sigma: float, exact: bool = True) -> np.ndarray:
    k = n_images(sigma) if exact else 0
    return TWO_PI * np.arange(-k, k + 1)


def wrapped_gaussian_pdf(chi, sigma: float, n_wrap: int | None = None):
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    chi = _wrap(np.asarray(chi, dtype=float))
    k = n_images(sigma) if n_wrap is None else n_wrap
    shifts = TWO_PI * np.arange(-k, k + 1)
    x = chi[..., None] + shifts
    out = np.exp(-0.5 * (x / sigma) ** 2).sum(axis=-1) / (sigma * math.sqrt(2 * math.pi))
    return float(out) if out.ndim == 0 else out


def _branch_args(s1, s2, theta):
    """The four wrapped arguments, stacked on a trailing axis."""
    d = s1 - s2
    t = s1 + s2
    return np.stack(
        [theta - d, theta + math.pi - t, theta - math.pi + t, theta + d], axis=-1
    )


def _chi(s1, s2, theta, sigma, exact=True):
    args = _wrap(_branch_args(s1, s2, theta))
    return (args[..., None] + _images(sigma, exact)).reshape(*args.shape[:-1], -1)


def _logsumexp(x, axis=-1):
    mx = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(mx, axis) + np.log(np.sum(np.exp(x - mx), axis=axis))


def _check_domain(s1, s2):
    lim = math.pi / 2 + 1e-12
    if np.any(np.abs(s1) > lim) or np.any(np.abs(s2) > lim):
        raise DomainError("s values must lie in [-pi/2, pi/2]")


def log_ps_density(s1, s2, theta: float, sigma: float, exact: bool = True):
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    _check_domain(s1, s2)
    chi = _chi(s1, s2, theta, sigma, exact)
    e = -0.5 * (chi / sigma) ** 2
    out = _logsumexp(e) - math.log(sigma) - _LOG_NORM - _LOG_2PI
    return float(out) if out.ndim == 0 else out


def ps_density(s1, s2, params: GaussianModelParams):
    return np.exp(log_ps_density(s1, s2, params.theta, params.sigma))


def pz_density(z1, z2, params: GaussianModelParams):
    """Density in z-space; |z| = 1 is excluded (integrable singularity)."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if np.any(np.abs(z1) >= 1) or np.any(np.abs(z2) >= 1):
        raise DomainError("pz_density is undefined at |z| = 1")
    jac = np.sqrt(1 - z1**2) * np.sqrt(1 - z2**2)
    return ps_density(np.arcsin(z1), np.arcsin(z2), params) / jac


def log_likelihood(data: ShotData, params: GaussianModelParams) -> float:
    return loglik(data.s1, data.s2, params.theta, params.sigma)


def loglik(s1, s2, theta, sigma, exact=True) -> float:
    return float(np.sum(log_ps_density(s1, s2, theta, sigma, exact)))


def score_terms(s1, s2, theta, sigma):
    """Per-shot log density and score (d/dtheta, d/dsigma).

    Each branch/image term is a Gaussian exp(-chi^2 / 2 sigma^2) / sigma with
    d chi / d theta = 1; the score is the softmax-weighted mean of the term
    derivatives.
    """
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    chi = _chi(s1, s2, theta, sigma)
    e = -0.5 * (chi / sigma) ** 2
    lse = _logsumexp(e)
    w = np.exp(e - lse[..., None])
    g_theta = np.sum(w * (-chi), axis=-1) / sigma**2
    g_sigma = np.sum(w * chi**2, axis=-1) / sigma**3 - 1.0 / sigma
    logp = lse - math.log(sigma) - _LOG_NORM - _LOG_2PI
    return logp, g_theta, g_sigma


def grad_loglik(s1, s2, theta, sigma) -> np.ndarray:
    _, gt, gs = score_terms(s1, s2, theta, sigma)
    return np.array([gt.sum(), gs.sum()])


def grad_log_likelihood(data: ShotData, params: GaussianModelParams) -> np.ndarray:
    return grad_loglik(data.s1, data.s2, params.theta, params.sigma)


def hess_loglik(s1, s2, theta, sigma) -> np.ndarray:
    """Analytic Hessian of the summed log-likelihood in (theta, sigma)."""
    chi = _chi(np.asarray(s1, float), np.asarray(s2, float), theta, sigma)
    e = -0.5 * (chi / sigma) ** 2
    w = np.exp(e - _logsumexp(e)[..., None])
    ft = -chi / sigma**2
    fs = chi**2 / sigma**3 - 1.0 / sigma
    ftt = -1.0 / sigma**2
    fts = 2 * chi / sigma**3
    fss = -3 * chi**2 / sigma**4 + 1.0 / sigma**2
    mt = np.sum(w * ft, -1)
    ms = np.sum(w * fs, -1)
    htt = np.sum(w * (ftt + ft * ft), -1) - mt * mt
    hts = np.sum(w * (fts + ft * fs), -1) - mt * ms
    hss = np.sum(w * (fss + fs * fs), -1) - ms * ms
    return np.array([[htt.sum(), hts.sum()], [hts.sum(), hss.sum()]])


def rectangle_edges(theta: float) -> dict[str, tuple[float, float]]:
    """Corners where the noiseless branch lines cross."""
    h = math.pi / 2
    return {
        "A": (-h + theta, -h),
        "B": (-h, -h + theta),
        "C": (h - theta, h),
        "D": (h, h - theta),
    }


def sample_model(theta: float, sigma: float, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw (s1, s2) from the surrogate by simulating its generative model."""
    eps = rng.uniform(-math.pi, math.pi, m)
    chi = rng.normal(0.0, sigma, m)
    return np.arcsin(np.sin(eps + chi + theta)), np.arcsin(np.sin(eps))

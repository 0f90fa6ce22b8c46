"""Fisher information of the surrogate model and the Cramer-Rao bound."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .gaussian import sample_model, score_terms


class SingularFisherError(ValueError):
    pass


@dataclass(frozen=True)
class FisherMatrix:
    """Per-shot information over (theta, sigma)."""

    f11: float
    f12: float
    f22: float
    n_nodes: int = 0
    est_error: float = 0.0
    converged: bool = True

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.f11, self.f12], [self.f12, self.f22]])

    @property
    def det(self) -> float:
        return self.f11 * self.f22 - self.f12**2

    def to_dict(self) -> dict:
        return asdict(self)


def _panel_nodes(breaks: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    a, b = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (b - a)
    return (a + half * (x + 1)).ravel(), (half * w).ravel()


def _ridge_breaks(lo: float, hi: float, centers, sigma: float) -> np.ndarray:
    pts = [lo, hi]
    for c in centers:
        for k in (0.0, 2.0, 5.0, 10.0):
            pts.extend([c - k * sigma, c + k * sigma])
    pts = np.unique(np.clip(pts, lo, hi))
    return pts[np.diff(np.concatenate([[-np.inf], pts])) > 1e-12]


def _fim_quad(theta: float, sigma: float, n: int) -> tuple[np.ndarray, int]:
    """Integrate p * score score^T over the square in rotated coordinates.

    With u = s1 - s2 and v = s1 + s2 the density ridges are the lines
    u = +-theta and v = +-(pi - theta); the square becomes |u| + |v| <= pi and
    ds1 ds2 = du dv / 2. Gauss-Legendre panels break at and around each ridge.
    """
    ub = _ridge_breaks(-math.pi, math.pi, (-theta, 0.0, theta), sigma)
    us, uw = _panel_nodes(ub, n)
    acc = np.zeros(3)
    nodes = 0
    vr = math.pi - theta
    for u, wu in zip(us, uw):
        half = math.pi - abs(u)
        vb = _ridge_breaks(-half, half, (-vr, vr), sigma)
        vs, vw = _panel_nodes(vb, n)
        s1 = 0.5 * (u + vs)
        s2 = 0.5 * (vs - u)
        logp, gt, gs = score_terms(s1, s2, theta, sigma)
        p = np.exp(logp) * vw
        acc += wu * np.array([p @ (gt * gt), p @ (gt * gs), p @ (gs * gs)])
        nodes += len(vs)
    return 0.5 * acc, nodes


def fim_numeric(theta: float, sigma: float, rtol: float = 1e-6, n_start: int = 16, n_max: int = 256) -> FisherMatrix:
    """Per-shot Fisher matrix by Gauss-Legendre quadrature, doubling the order until stable."""
    if not 0 < theta < math.pi:
        raise ValueError("theta must lie strictly inside (0, pi)")
    if not 1e-3 <= sigma <= 5:
        raise ValueError("sigma must lie in [1e-3, 5]")
    prev, _ = _fim_quad(theta, sigma, n_start)
    n = n_start
    err = math.inf
    while n < n_max:
        n *= 2
        cur, nodes = _fim_quad(theta, sigma, n)
        err = float(np.max(np.abs(cur - prev)) / np.max(np.abs(cur)))
        prev = cur
        if err < rtol:
            break
    return FisherMatrix(float(prev[0]), float(prev[1]), float(prev[2]), nodes, err, err < rtol)


def fim_monte_carlo(theta: float, sigma: float, n_samples: int, rng: np.random.Generator):
    """Sample mean of score outer products and its standard errors."""
    s1, s2 = sample_model(theta, sigma, n_samples, rng)
    _, gt, gs = score_terms(s1, s2, theta, sigma)
    prods = np.stack([gt * gt, gt * gs, gs * gs])
    return prods.mean(axis=1), prods.std(axis=1, ddof=1) / math.sqrt(n_samples)


def crb(fim: FisherMatrix, m: int) -> np.ndarray:
    """Covariance lower bound F^-1 / m from the closed-form 2x2 inverse."""
    det = fim.det
    if not det > 1e-12 * max(fim.f11 * fim.f22, 1e-300):
        raise SingularFisherError("Fisher matrix is singular; theta too close to 0 or pi")
    return np.array([[fim.f22, -fim.f12], [-fim.f12, fim.f11]]) / (m * det)


def analytic_bounds(sigma: float, m: int, n1: int, n2: int, tau: float) -> dict:
    """Small-width limits of the bounds on theta, sigma and tau."""
    root2m = math.sqrt(2 * m)
    if tau > 0:
        dtau = sigma**2 / ((n1 + n2) * tau * root2m)
        dtau_approx = tau / root2m
    else:
        dtau = dtau_approx = math.inf
    return {
        "dtheta": sigma / math.sqrt(m),
        "dsigma": sigma / root2m,
        "dtau": dtau,
        "dtau_approx": dtau_approx,
        "dtau_unbounded": tau <= 0,
        "small_width": sigma < 0.5,
    }

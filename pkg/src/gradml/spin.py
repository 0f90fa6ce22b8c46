"""Collective-spin model of a single Mach-Zehnder interferometer.

States are stored in the J_z eigenbasis, index ``n = mu + N/2`` running from
``mu = -N/2`` (index 0) to ``mu = +N/2`` (index N).
"""
from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

N_MAX = 2000

_rotation_cache: dict[int, "RotationHalfPi"] = {}
_rotation_lock = threading.Lock()


class CapacityError(ValueError):
    """Particle number beyond the supported maximum."""


class ValidityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SpinState:
    n_particles: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (self.n_particles + 1,):
            raise ValueError(
                f"expected {self.n_particles + 1} amplitudes, got {self.amplitudes.shape}"
            )

    @property
    def mu(self) -> np.ndarray:
        return np.arange(self.n_particles + 1) - self.n_particles / 2

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))


@dataclass(frozen=True)
class RotationHalfPi:
    """Matrix of exp(-i pi/2 J_x) in the J_z basis."""

    n_particles: int
    matrix: np.ndarray


def _check_n(n: int, n_max: int = N_MAX) -> int:
    n = int(n)
    if n < 1:
        raise ValueError(f"particle number must be >= 1, got {n}")
    if n > n_max:
        raise CapacityError(f"particle number {n} exceeds N_max={n_max}")
    return n


def bs_state(n: int, gaussian_threshold: int | None = None) -> SpinState:
    """State after the first beam splitter, exp(-i pi/2 J_y)|N/2>.

    By default the exact binomial amplitudes are returned for every N. When
    ``gaussian_threshold`` is given, N above it uses the large-N Gaussian form
    c_mu ~ exp(-mu^2/N), renormalized.
    """
    n = _check_n(n, n_max=10**7)
    k = np.arange(n + 1)
    mu = k - n / 2
    if gaussian_threshold is not None and n > gaussian_threshold:
        amp = np.exp(-(mu**2) / n)
    else:
        # sqrt(C(N, k)) / 2^(N/2) evaluated in log space
        log_amp = 0.5 * (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)) - 0.5 * n * np.log(2.0)
        amp = np.exp(log_amp)
    amp = amp / np.sqrt(np.sum(amp**2))
    return SpinState(n, amp.astype(complex))


def apply_phase_twist(state: SpinState, phi: float, tau: float) -> SpinState:
    mu = state.mu
    phase = np.exp(-1j * (phi * mu + tau * mu**2))
    return SpinState(state.n_particles, state.amplitudes * phase)


def wigner_d_half_pi(n: int) -> np.ndarray:
    """Real matrix d[k', k] = <k'|exp(-i pi/2 J_y)|k> for spin N/2.

    Built one particle at a time: the symmetric N-particle state |N, k> is
    coupled from |N-1, k-1>|a> and |N-1, k>|b> with weights sqrt(k/N) and
    sqrt((N-k)/N), so every step is a restriction of a unitary product and
    rounding is not amplified. Cost O(N^3), memory O(N^2).
    """
    n = _check_n(n)
    c = np.sqrt(0.5)
    # single-particle rotation: u|a> = c|a> + c|b>, u|b> = -c|a> + c|b>
    d = np.array([[c, c], [-c, c]])
    for nn in range(2, n + 1):
        k = np.arange(nn + 1)
        wa = np.sqrt(k / nn)
        wb = np.sqrt((nn - k) / nn)
        # rows: <N,k'| = wa <N-1,k'-1|<a| + wb <N-1,k'|<b|
        up = np.zeros((nn + 1, nn))
        up[1:] = d
        up *= wa[:, None]
        dn = np.zeros((nn + 1, nn))
        dn[:-1] = d
        dn *= wb[:, None]
        col_a = up + dn  # u|a> contributions
        col_b = dn - up  # u|b> contributions
        new = np.zeros((nn + 1, nn + 1))
        new[:, 1:] = col_a * (c * wa[1:])
        new[:, :-1] += col_b * (c * wb[:-1])
        d = new
    return d


def rotation_half_pi(n: int, n_max: int = N_MAX) -> RotationHalfPi:
    """exp(-i pi/2 J_x) = exp(i pi/2 J_z) exp(-i pi/2 J_y) exp(-i pi/2 J_z)."""
    n = _check_n(n, n_max)
    cached = _rotation_cache.get(n)
    if cached is not None:
        return cached
    with _rotation_lock:
        if n not in _rotation_cache:
            d = wigner_d_half_pi(n)
            k = np.arange(n + 1)
            # i^(mu - mu') depends only on k - k'
            phase = 1j ** ((k[:, None] - k[None, :]) % 4)
            m = phase * d
            m.setflags(write=False)
            _rotation_cache[n] = RotationHalfPi(n, m)
    return _rotation_cache[n]


def _clip_renorm(p: np.ndarray, axis: int = 0) -> np.ndarray:
    p = np.where(p < 1e-14, np.maximum(p, 0.0), p)
    return p / p.sum(axis=axis, keepdims=True)


def output_distribution(n: int, phi: float, tau: float, n_max: int = N_MAX) -> np.ndarray:
    """P(mu | phi, tau) for mu = -N/2 .. N/2 at the interferometer output."""
    rot = rotation_half_pi(n, n_max)
    psi = apply_phase_twist(bs_state(n), phi, tau)
    p = np.abs(rot.matrix @ psi.amplitudes) ** 2
    return _clip_renorm(p)


def output_distributions(n: int, phis: np.ndarray, tau: float, n_max: int = N_MAX) -> np.ndarray:
    """Columns P(mu | phi_k, tau) for many phases at once, shape (N+1, len(phis))."""
    rot = rotation_half_pi(n, n_max)
    psi = apply_phase_twist(bs_state(n), 0.0, tau)
    b = rot.matrix * psi.amplitudes[None, :]
    mu = psi.mu
    out = np.empty((n + 1, len(phis)))
    chunk = max(1, 2**22 // (n + 1))
    for start in range(0, len(phis), chunk):
        ph = np.asarray(phis[start:start + chunk])
        e = np.exp(-1j * np.outer(mu, ph))
        out[:, start:start + chunk] = np.abs(b @ e) ** 2
    return _clip_renorm(out, axis=0)


def output_distributions_grid(n: int, phi0: float, k_phi: int, tau: float, n_max: int = N_MAX) -> np.ndarray:
    """P(mu | phi0 + 2 pi k / K) for k = 0..K-1, shape (K, N+1).

    The sum over mu is a discrete Fourier series in the phase, so the whole
    equispaced grid comes from one FFT of length K >= N+1 per output row.
    """
    if k_phi < n + 1:
        raise ValueError(f"grid of {k_phi} phases cannot resolve N={n}")
    rot = rotation_half_pi(n, n_max)
    psi = apply_phase_twist(bs_state(n), phi0, tau)
    b = rot.matrix * psi.amplitudes[None, :]
    # exp(-i 2 pi k mu / K) differs from exp(-i 2 pi k n / K) by a k-only phase
    amp = np.fft.fft(b, n=k_phi, axis=1)
    return _clip_renorm(np.abs(amp.T) ** 2, axis=1)


def dephasing_width(n: int, tau: float) -> tuple[float, bool]:
    """Squared phase width 1/N + N tau^2, and whether it is in the valid regime."""
    s2 = 1.0 / n + n * tau**2
    valid = s2 <= 0.5
    if not valid:
        warnings.warn(f"dephasing width {s2:.3g} rad^2 outside small-width regime", ValidityWarning, stacklevel=2)
    return s2, valid


def jy_variance(n: int, tau: float) -> float:
    """Kitagawa-Ueda variance of J_y for the twisted coherent state."""
    if tau == 0.0:
        return n / 4.0
    a = 1.0 - np.cos(2 * tau) ** (n - 2)
    b = 4.0 * np.sin(tau) * np.cos(tau) ** (n - 2)
    if a == 0.0:
        cos2d = 0.0 if b != 0.0 else 1.0
    else:
        cos2d = np.cos(np.arctan(b / a))
    return n / 4.0 * (1.0 + (n - 1) / 4.0 * (a + np.sqrt(a**2 + b**2) * cos2d))


def visibility(n: int, tau: float) -> float:
    return float(np.cos(tau) ** (n - 1))

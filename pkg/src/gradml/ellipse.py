"""Conic fits of (z1, z2) data and the differential phase they imply.

Conic: a z1^2 + b z1 z2 + c z2^2 + d z1 + e z2 + f = 0.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

ELLIPSE_SPECIFIC = "algebraic_ellipse_specific"
TRACE = "algebraic_trace"
GEOMETRIC = "geometric"


class DegenerateDataError(ValueError):
    pass


class InvalidConicError(ValueError):
    pass


@dataclass(frozen=True)
class ConicCoeffs:
    a: float
    b: float
    c: float
    d: float
    e: float
    f: float
    fit_method: str
    converged: bool = True
    rms_residual: float = float("nan")
    n_iter: int = 0

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.e, self.f])

    @property
    def discriminant(self) -> float:
        """4ac - b^2; positive for an ellipse."""
        return 4 * self.a * self.c - self.b**2

    @property
    def is_ellipse(self) -> bool:
        return self.discriminant > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_vector(cls, nu, fit_method: str, **kw) -> "ConicCoeffs":
        nu = np.asarray(nu, dtype=float)
        return cls(*map(float, nu), fit_method=fit_method, **kw)


def _xy(data):
    if hasattr(data, "z1"):
        return np.asarray(data.z1, float), np.asarray(data.z2, float)
    x, y = data
    return np.asarray(x, float), np.asarray(y, float)


def design_matrix(x, y) -> np.ndarray:
    return np.column_stack([x * x, x * y, y * y, x, y, np.ones_like(x)])


def _check_design(x, y):
    if len(x) < 6:
        raise DegenerateDataError(f"need at least 6 points, got {len(x)}")
    sv = np.linalg.svd(design_matrix(x, y), compute_uv=False)
    # an exact conic leaves one null direction; more than one is degenerate
    if sv[4] <= 1e-10 * sv[0]:
        raise DegenerateDataError("design matrix is rank deficient")


def fit_algebraic_ellipse_specific(data) -> ConicCoeffs:
    """Direct least squares under 4ac - b^2 = 1 (Fitzgibbon, in Halir-Flusser form)."""
    x, y = _xy(data)
    _check_design(x, y)
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    t = -np.linalg.solve(s3, s2.T)
    m = s1 + s2 @ t
    # premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]]
    m = np.vstack([m[2] / 2, -m[1], m[0] / 2])
    w, v = np.linalg.eig(m)
    v = np.real(v)
    cond = 4 * v[0] * v[2] - v[1] ** 2
    ok = np.flatnonzero(cond > 0)
    if ok.size == 0:
        raise DegenerateDataError("no ellipse solution")
    # the constrained minimum is the admissible eigenvector of smallest |eigenvalue|
    k = ok[np.argmin(np.abs(np.real(w[ok])))]
    a1 = v[:, k]
    nu = np.concatenate([a1, t @ a1])
    nu /= math.sqrt(4 * nu[0] * nu[2] - nu[1] ** 2)
    if nu[0] < 0:
        nu = -nu
    res = orthogonal_residuals(nu, x, y)
    return ConicCoeffs.from_vector(nu, ELLIPSE_SPECIFIC, converged=True, rms_residual=float(np.sqrt(np.mean(res**2))))


def fit_algebraic_trace(data) -> ConicCoeffs:
    """Linear least squares under a + c = 1; may return a non-ellipse."""
    x, y = _xy(data)
    _check_design(x, y)
    dm = design_matrix(x, y)
    # nu = (1 - c, b, c, d, e, f): residual = x^2 + [xy, y^2 - x^2, x, y, 1] @ (b, c, d, e, f)
    a_mat = np.column_stack([dm[:, 1], dm[:, 2] - dm[:, 0], dm[:, 3], dm[:, 4], dm[:, 5]])
    sol, *_ = np.linalg.lstsq(a_mat, -dm[:, 0], rcond=None)
    b, c, d, e, f = sol
    nu = np.array([1 - c, b, c, d, e, f])
    is_ell = 4 * nu[0] * nu[2] - nu[1] ** 2 > 0
    rms = float(np.sqrt(np.mean(orthogonal_residuals(nu, x, y) ** 2))) if is_ell else float("nan")
    return ConicCoeffs.from_vector(nu, TRACE, converged=bool(is_ell), rms_residual=rms)


# -- geometric (orthogonal-distance) fit -----------------------------------

def conic_to_params(nu) -> np.ndarray:
    """Ellipse conic -> (xc, yc, semi-axis 1, semi-axis 2, tilt)."""
    a, b, c, d, e, f = nu
    if 4 * a * c - b * b <= 0:
        raise InvalidConicError("conic is not an ellipse")
    xc, yc = np.linalg.solve([[2 * a, b], [b, 2 * c]], [-d, -e])
    f0 = f + 0.5 * (d * xc + e * yc)
    lam, vec = np.linalg.eigh([[a, b / 2], [b / 2, c]])
    if np.any(-f0 / lam <= 0):
        raise InvalidConicError("imaginary ellipse")
    ax = np.sqrt(-f0 / lam)
    phi = math.atan2(vec[1, 0], vec[0, 0])
    return np.array([xc, yc, ax[0], ax[1], phi])


def params_to_conic(p) -> np.ndarray:
    xc, yc, A, B, phi = p
    cs, sn = math.cos(phi), math.sin(phi)
    ia, ib = 1 / A**2, 1 / B**2
    a = cs * cs * ia + sn * sn * ib
    b = 2 * cs * sn * (ia - ib)
    c = sn * sn * ia + cs * cs * ib
    d = -2 * a * xc - b * yc
    e = -b * xc - 2 * c * yc
    f = a * xc * xc + b * xc * yc + c * yc * yc - 1
    nu = np.array([a, b, c, d, e, f])
    return nu / np.linalg.norm(nu)


def _foot_points(u, v, A, B, n_iter=40):
    """Parameter t of the closest ellipse point to (u, v) in the ellipse frame."""
    t = np.arctan2(A * v, B * u)
    k = A * A - B * B
    for _ in range(n_iter):
        st, ct = np.sin(t), np.cos(t)
        g = u * A * st - v * B * ct - k * st * ct
        gp = u * A * ct + v * B * st - k * (ct * ct - st * st)
        step = np.where(gp > 1e-300, g / np.where(gp > 1e-300, gp, 1.0), 0.0)
        step = np.clip(step, -0.5, 0.5)
        t = t - step
        if np.max(np.abs(step)) < 1e-15:
            break
    return t


def _residuals_jac(p, x, y):
    xc, yc, A, B, phi = p
    cs, sn = math.cos(phi), math.sin(phi)
    dx, dy = x - xc, y - yc
    u = cs * dx + sn * dy
    v = -sn * dx + cs * dy
    t = _foot_points(u, v, A, B)
    ct, st = np.cos(t), np.sin(t)
    # outward unit normal at the foot point, ellipse frame
    nl0, nl1 = B * ct, A * st
    nn = np.hypot(nl0, nl1)
    nl0, nl1 = nl0 / nn, nl1 / nn
    r = (u - A * ct) * nl0 + (v - B * st) * nl1
    nw0 = cs * nl0 - sn * nl1
    nw1 = sn * nl0 + cs * nl1
    jac = -np.column_stack([nw0, nw1, nl0 * ct, nl1 * st, -nl0 * B * st + nl1 * A * ct])
    return r, jac


def orthogonal_residuals(nu, x, y) -> np.ndarray:
    """Signed Euclidean distances from points to an ellipse conic."""
    r, _ = _residuals_jac(conic_to_params(nu), np.asarray(x, float), np.asarray(y, float))
    return r


def fit_geometric(data, init: ConicCoeffs | None = None, max_iter: int = 200, step_tol: float = 1e-10) -> ConicCoeffs:
    """Orthogonal-distance fit by Levenberg-Marquardt on (center, axes, tilt)."""
    x, y = _xy(data)
    if init is None:
        init = fit_algebraic_ellipse_specific((x, y))
    try:
        p = conic_to_params(init.vector)
    except (InvalidConicError, np.linalg.LinAlgError) as exc:
        raise InvalidConicError(f"geometric fit needs an ellipse start: {exc}") from None
    r, jac = _residuals_jac(p, x, y)
    cost = r @ r
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jtj = jac.T @ jac
        g = jac.T @ r
        accepted = False
        while lam < 1e12:
            h = jtj + lam * np.diag(np.diag(jtj) + 1e-15)
            try:
                delta = -np.linalg.solve(h, g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            pn = p + delta
            if pn[2] <= 0 or pn[3] <= 0:
                lam *= 10
                continue
            rn, jn = _residuals_jac(pn, x, y)
            cn = rn @ rn
            if cn <= cost:
                p, r, jac, cost = pn, rn, jn, cn
                lam = max(lam / 3, 1e-12)
                accepted = True
                break
            lam *= 3
        # no decrease even at huge damping means the step has vanished
        if not accepted or np.linalg.norm(delta) < step_tol:
            converged = True
            break
    nu = params_to_conic(p)
    ok = converged and 4 * nu[0] * nu[2] - nu[1] ** 2 > 0
    return ConicCoeffs.from_vector(nu, GEOMETRIC, converged=bool(ok), rms_residual=float(np.sqrt(cost / len(x))), n_iter=it)


def theta_from_conic(nu) -> float:
    """Differential phase arccos(-b / (2 sqrt(ac))) in [0, pi]."""
    if isinstance(nu, ConicCoeffs):
        a, b, c = nu.a, nu.b, nu.c
    else:
        a, b, c = nu[0], nu[1], nu[2]
    if not a * c > 0:
        raise InvalidConicError("a * c must be positive")
    arg = -b / (2 * math.sqrt(a * c))
    if abs(arg) > 1 + 1e-12:
        raise InvalidConicError(f"arccos argument {arg} outside [-1, 1]")
    return math.acos(min(1.0, max(-1.0, arg)))

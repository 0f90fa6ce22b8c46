"""Two-interferometer joint outcome distribution under uniform common-mode noise.

The common phase eps is integrated on an equispaced grid of K points. Each
conditional P_j(mu | eps) is a trigonometric polynomial of degree <= N_j in
eps, so the rectangle rule with K > N_1 + N_2 reproduces the continuous
integral up to rounding. Sampling eps uniformly from that grid therefore
gives exactly the same (mu_1, mu_2) law as a continuous uniform eps.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .spin import N_MAX, CapacityError, output_distributions_grid


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class OutcomeError(ValueError):
    pass


def reduce_theta(theta: float) -> float:
    """Map a phase difference onto [0, pi]; the sign is not identifiable."""
    t = math.remainder(theta, 2 * math.pi)
    return abs(t)


@dataclass(frozen=True)
class InterferometerConfig:
    n1: int
    n2: int
    tau: float = 0.0
    theta1: float = 0.0
    theta2: float = 0.0

    def __post_init__(self):
        for name in ("n1", "n2"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
            if v > N_MAX:
                raise CapacityError(f"{name}={v} exceeds N_max={N_MAX}")
        if not self.tau >= 0:
            raise ConfigError("tau", f"must be >= 0, got {self.tau!r}")
        for name in ("theta1", "theta2"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(name, "must be finite")

    @classmethod
    def symmetric(cls, n: int, tau: float, theta: float) -> "InterferometerConfig":
        return cls(n1=n, n2=n, tau=tau, theta1=theta, theta2=0.0)

    @property
    def theta(self) -> float:
        return reduce_theta(self.theta1 - self.theta2)

    @property
    def sigma_true_sq(self) -> float:
        return 1.0 / self.n1 + 1.0 / self.n2 + (self.n1 + self.n2) * self.tau**2

    @property
    def sigma_true(self) -> float:
        return math.sqrt(self.sigma_true_sq)

    def to_dict(self) -> dict:
        return asdict(self)


def default_grid_size(config: InterferometerConfig) -> int:
    need = 4 * (max(config.n1, config.n2) + 1)
    return 1 << (need - 1).bit_length()


@lru_cache(maxsize=6)
def _phase_table(n: int, tau: float, theta: float, k_phi: int) -> tuple[np.ndarray, np.ndarray]:
    p = output_distributions_grid(n, -math.pi + theta, k_phi, tau)
    cdf = np.cumsum(p, axis=1)
    cdf[:, -1] = 1.0
    p.setflags(write=False)
    cdf.setflags(write=False)
    return p, cdf


@dataclass(frozen=True)
class ConditionalTable:
    """P_j(mu_j | eps_k + theta_j) on the grid eps_k = -pi + 2 pi k / K.

    ``p1``/``p2`` have shape (K, N_j + 1); rows are phases.
    """

    config: InterferometerConfig
    k_phi: int
    p1: np.ndarray = field(repr=False)
    p2: np.ndarray = field(repr=False)
    cdf1: np.ndarray = field(repr=False)
    cdf2: np.ndarray = field(repr=False)

    @property
    def eps(self) -> np.ndarray:
        return -math.pi + 2 * math.pi * np.arange(self.k_phi) / self.k_phi

    def joint_matrix(self) -> np.ndarray:
        """Full P(mu_1, mu_2), shape (N_1 + 1, N_2 + 1)."""
        return self.p1.T @ self.p2 / self.k_phi

    def conditional_means(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.config
        z1 = (2 * np.arange(c.n1 + 1) - c.n1) / c.n1
        z2 = (2 * np.arange(c.n2 + 1) - c.n2) / c.n2
        return self.p1 @ z1, self.p2 @ z2


def build_table(config: InterferometerConfig, k_phi: int | None = None) -> ConditionalTable:
    if k_phi is None:
        k_phi = default_grid_size(config)
    need = 4 * (max(config.n1, config.n2) + 1)
    if k_phi < need:
        raise ConfigError("k_phi", f"grid of {k_phi} too coarse, need >= {need}")
    if k_phi & (k_phi - 1):
        raise ConfigError("k_phi", f"must be a power of two, got {k_phi}")
    p1, cdf1 = _phase_table(config.n1, float(config.tau), float(config.theta1), k_phi)
    p2, cdf2 = _phase_table(config.n2, float(config.tau), float(config.theta2), k_phi)
    return ConditionalTable(config, k_phi, p1, p2, cdf1, cdf2)


def outcome_index(z, n: int) -> np.ndarray:
    """Lattice index mu + N/2 of normalized outcomes z = 2 mu / N."""
    z = np.asarray(z, dtype=float)
    x = (z + 1.0) * n / 2.0
    idx = np.rint(x)
    if np.any(np.abs(x - idx) > 1e-8) or np.any(idx < 0) or np.any(idx > n):
        raise OutcomeError(f"outcome not on the lattice 2 mu / {n} within [-1, 1]")
    return idx.astype(np.int64)


def joint_density(z1, z2, config: InterferometerConfig, table: ConditionalTable):
    """Probability of the outcome pair (z1, z2); accepts scalars or arrays."""
    i1 = outcome_index(z1, config.n1)
    i2 = outcome_index(z2, config.n2)
    out = np.einsum("k...,k...->...", table.p1[:, i1], table.p2[:, i2]) / table.k_phi
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ShotData:
    z1: np.ndarray
    z2: np.ndarray
    seed: int | None = None
    n1: int | None = None
    n2: int | None = None
    config: InterferometerConfig | None = None

    def __post_init__(self):
        z1 = np.asarray(self.z1, dtype=float)
        z2 = np.asarray(self.z2, dtype=float)
        if z1.shape != z2.shape or z1.ndim != 1:
            raise ValueError("z1 and z2 must be 1-d arrays of equal length")
        if np.any(np.abs(z1) > 1) or np.any(np.abs(z2) > 1):
            raise OutcomeError("outcomes must lie in [-1, 1]")
        object.__setattr__(self, "z1", z1)
        object.__setattr__(self, "z2", z2)

    @property
    def m(self) -> int:
        return len(self.z1)

    @property
    def s1(self) -> np.ndarray:
        return np.arcsin(self.z1)

    @property
    def s2(self) -> np.ndarray:
        return np.arcsin(self.z2)

    def repeated(self, times: int) -> "ShotData":
        return ShotData(np.tile(self.z1, times), np.tile(self.z2, times), self.seed, self.n1, self.n2, self.config)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def sample_shots(config: InterferometerConfig, table: ConditionalTable, m: int, seed: int) -> ShotData:
    """Draw m shots: eps uniform on the grid, then mu_j from its conditional."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = make_rng(seed)
    k = rng.integers(0, table.k_phi, size=m)
    u = rng.random((2, m))
    i1 = (table.cdf1[k] < u[0][:, None]).sum(axis=1)
    i2 = (table.cdf2[k] < u[1][:, None]).sum(axis=1)
    z1 = (2 * i1 - config.n1) / config.n1
    z2 = (2 * i2 - config.n2) / config.n2
    return ShotData(z1, z2, seed=int(seed), n1=config.n1, n2=config.n2, config=config)


# -- serialization -----------------------------------------------------------

def write_shots(data: ShotData, path: str | Path, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>`` as CSV (shot,z1,z2) and ``<path>.json`` as sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["shot", "z1", "z2"])
        for i, (a, b) in enumerate(zip(data.z1, data.z2)):
            w.writerow([i, f"{a:.17g}", f"{b:.17g}"])
    side = {
        "version": __version__,
        "m": data.m,
        "seed": data.seed,
        "n1": data.n1,
        "n2": data.n2,
        "config": data.config.to_dict() if data.config is not None else None,
    }
    if extra:
        side.update(extra)
    sidecar = sidecar_path(path)
    sidecar.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


class ShotFileError(ValueError):
    pass


def read_shots(path: str | Path, clip_tol: float = 1e-6) -> tuple[ShotData, list[str]]:
    """Read a shot CSV and its sidecar (if present).

    Values outside [-1, 1] by at most ``clip_tol`` are clipped; the returned
    list carries one warning per clipped value.
    """
    path = Path(path)
    warnings_out: list[str] = []
    z1, z2 = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ShotFileError(f"{path}: empty file")
        if [h.strip() for h in header] != ["shot", "z1", "z2"]:
            raise ShotFileError(f"{path}:1: expected header shot,z1,z2")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ShotFileError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                a, b = float(row[1]), float(row[2])
            except ValueError as exc:
                raise ShotFileError(f"{path}:{lineno}: {exc}") from None
            vals = []
            for v in (a, b):
                if not math.isfinite(v):
                    raise ShotFileError(f"{path}:{lineno}: non-finite value")
                if abs(v) > 1:
                    if abs(v) - 1 > clip_tol:
                        raise ShotFileError(f"{path}:{lineno}: value {v!r} outside [-1, 1]")
                    warnings_out.append(f"{path}:{lineno}: clipped {v!r} to {math.copysign(1.0, v)}")
                    v = math.copysign(1.0, v)
                vals.append(v)
            z1.append(vals[0])
            z2.append(vals[1])
    if not z1:
        raise ShotFileError(f"{path}: no data rows")
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    config = InterferometerConfig(**meta["config"]) if meta.get("config") else None
    data = ShotData(np.array(z1), np.array(z2), seed=meta.get("seed"), n1=meta.get("n1"), n2=meta.get("n2"), config=config)
    return data, warnings_out

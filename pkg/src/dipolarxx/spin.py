"""Collective-spin moment bookkeeping shared by all engines."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AXES = "xyz"


def transverse_min_variance(mean, cov) -> float:
    """Smallest variance of J along a direction perpendicular to <J>.

    ``cov`` is the symmetrized 3x3 covariance. The minimum over the plane is
    the smaller eigenvalue of the covariance projected onto that plane.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = mean / np.linalg.norm(mean)
    trial = np.eye(3)[np.argmin(np.abs(n))]
    e1 = np.cross(n, trial)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    basis = np.stack([e1, e2])
    return float(np.linalg.eigvalsh(basis @ cov @ basis.T)[0])


def squeezing_parameter(N: int, mean, cov) -> float:
    """Wineland parameter N min_perp Var(J_perp) / |<J>|^2; inf when <J> = 0."""
    length2 = float(np.dot(mean, mean))
    if length2 < 1e-24:
        return np.inf
    return N * transverse_min_variance(mean, cov) / length2


def xi2_mean_along_x(N, jx, jy2, jz2, yz_sym) -> float:
    """Closed form of the squeezing parameter when <J> points along x.

    ``jy2``/``jz2`` are second moments (the means along y, z vanish) and
    ``yz_sym`` is <{J^y, J^z}>/2.
    """
    if abs(jx) < 1e-12:
        return np.inf
    s = jy2 + jz2
    d = np.sqrt((jy2 - jz2) ** 2 + 4.0 * yz_sym**2)
    return N * 0.5 * (s - d) / jx**2


@dataclass
class SpinMoments:
    """First and symmetrized second moments of the collective spin.

    ``second[a, b] = <{J^a, J^b}>/2``. Parity entries are optional because
    not every engine computes them.
    """

    N: int
    mean: np.ndarray
    second: np.ndarray
    parity: float = np.nan
    dparity: float = np.nan
    extra: dict = field(default_factory=dict)

    @property
    def cov(self) -> np.ndarray:
        return self.second - np.outer(self.mean, self.mean)

    def var(self, axis: str) -> float:
        a = AXES.index(axis)
        return float(self.cov[a, a])

    @property
    def J2(self) -> float:
        return float(np.trace(self.second))

    @property
    def xi2(self) -> float:
        return squeezing_parameter(self.N, self.mean, self.cov)

    def as_row(self) -> dict:
        row = {
            "Jx": float(self.mean[0]),
            "Jy": float(self.mean[1]),
            "Jz": float(self.mean[2]),
            "Jx2": float(self.second[0, 0]),
            "Jy2": float(self.second[1, 1]),
            "Jz2": float(self.second[2, 2]),
            "VarJx": self.var("x"),
            "VarJy": self.var("y"),
            "VarJz": self.var("z"),
            "JyJz_sym": float(self.second[1, 2]),
            "J2": self.J2,
            "xi2": self.xi2,
            "parity": self.parity,
            "dparity_dtheta": self.dparity,
        }
        row.update(self.extra)
        return row

"""Maximal-spin (Dicke) sector engine and one-axis-twisting reference.

Amplitude index ``k = M + N/2`` runs over ``M = -N/2 .. N/2``; ``M`` counts
half the difference between up and down spins, so the number of down spins
is ``N/2 - M``. The single-spin state ``|-x>`` is ``(|up> - |down>)/sqrt 2``,
which fixes the sign of every ``CSS_-x`` amplitude below.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln

from .spin import SpinMoments


@dataclass(frozen=True)
class OatSpec:
    """Planar rotor H = (J^z)^2 / (2 I); bare OAT limit has I = N / coupling."""

    N: int
    I: float

    @classmethod
    def bare(cls, N: int, coupling: float = 1.0) -> "OatSpec":
        return cls(N, N / coupling)

    @property
    def chi(self) -> float:
        return 1.0 / (2.0 * self.I)

    @property
    def t_ghz(self) -> float:
        return np.pi * self.I

    def t_q(self, q: int) -> float:
        return 2.0 * np.pi * self.I / q

    @property
    def t_inv(self) -> float:
        return 2.0 * np.pi * self.I

    @property
    def t_rev(self) -> float:
        return 4.0 * np.pi * self.I


@dataclass
class DickeState:
    N: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.N + 1,):
            raise ValueError(f"expected {self.N + 1} amplitudes, got {self.amplitudes.shape}")

    @property
    def M(self) -> np.ndarray:
        return np.arange(self.N + 1) - self.N / 2

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def overlap(self, other: "DickeState") -> float:
        return float(abs(np.vdot(self.amplitudes, other.amplitudes)) ** 2)


def _ladder(N: int) -> np.ndarray:
    """c_k with J^+ |M_k> = c_k |M_{k+1}>, k = 0..N-1."""
    J = N / 2
    M = np.arange(N) - J
    return np.sqrt(J * (J + 1) - M * (M + 1))


def collective_spin_matrices(N: int):
    """Dense J^x, J^y, J^z in the Dicke basis (ascending M)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    jp = np.diag(_ladder(N), -1).astype(complex)
    jm = jp.T.conj()
    jx = (jp + jm) / 2
    jy = (jp - jm) / 2j
    jz = np.diag(np.arange(N + 1) - N / 2).astype(complex)
    return jx, jy, jz


def _apply_jp(a, c):
    out = np.zeros_like(a)
    out[1:] = c * a[:-1]
    return out


def _apply_jm(a, c):
    out = np.zeros_like(a)
    out[:-1] = c * a[1:]
    return out


def apply_collective(state: DickeState, axis: str) -> np.ndarray:
    a = state.amplitudes
    if axis == "z":
        return state.M * a
    c = _ladder(state.N)
    up, dn = _apply_jp(a, c), _apply_jm(a, c)
    if axis == "x":
        return (up + dn) / 2
    if axis == "y":
        return (up - dn) / 2j
    raise ValueError(f"unknown axis {axis!r}")


def css_dicke(N: int, phi: float = 0.0) -> DickeState:
    """Coherent state in the xy plane at azimuth ``phi`` (phi=0 is CSS_x)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    k = np.arange(N + 1)
    log_amp = 0.5 * (gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1)) - 0.5 * N * np.log(2)
    M = k - N / 2
    return DickeState(N, np.exp(log_amp) * np.exp(-1j * phi * M))


def css_x_dicke(N: int) -> DickeState:
    return css_dicke(N, 0.0)


def css_mx_dicke(N: int) -> DickeState:
    """Product of ``(|up> - |down>)/sqrt 2``: amplitudes carry (-1)^(N/2 - M)."""
    a = css_x_dicke(N).amplitudes
    n_down = N - np.arange(N + 1)
    return DickeState(N, a * (-1.0) ** n_down)


def oat_evolve(state: DickeState, spec: OatSpec, t: float) -> DickeState:
    M = state.M
    return DickeState(state.N, np.exp(-1j * M**2 * t / (2 * spec.I)) * state.amplitudes)


def ghz_dicke(N: int, sign: int = 1) -> DickeState:
    """(|CSS_x> + i*sign |CSS_-x>)/sqrt 2."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    a = (css_x_dicke(N).amplitudes + 1j * sign * css_mx_dicke(N).amplitudes) / np.sqrt(2)
    return DickeState(N, a)


def ghz_branch(N: int) -> int:
    """Sign of the GHZ state reached by OAT at t = pi I, picked by fidelity."""
    spec = OatSpec.bare(N)
    psi = oat_evolve(css_x_dicke(N), spec, spec.t_ghz)
    fid = {s: ghz_dicke(N, s).overlap(psi) for s in (1, -1)}
    return max(fid, key=fid.get)


def qcat_dicke(N: int, q: int, spec: OatSpec | None = None) -> DickeState:
    """OAT snapshot at t_q = 2 pi I / q, used as the q-cat reference."""
    if q <= 0:
        raise ValueError("q must be positive")
    if N % 2:
        raise ValueError("q-cat references need even N")
    spec = spec or OatSpec.bare(N)
    return oat_evolve(css_x_dicke(N), spec, spec.t_q(q))


def parity_signs(N: int) -> np.ndarray:
    """Eigenvalue of prod_i 2 S_i^z on |M>: (-1)^(number of down spins)."""
    return (-1.0) ** (N - np.arange(N + 1))


def dicke_observables(state: DickeState) -> SpinMoments:
    a = state.amplitudes
    vec = {ax: apply_collective(state, ax) for ax in "xyz"}
    mean = np.array([np.vdot(a, vec[ax]).real for ax in "xyz"])
    second = np.empty((3, 3))
    for i, u in enumerate("xyz"):
        for j, v in enumerate("xyz"):
            second[i, j] = np.vdot(vec[u], vec[v]).real
    p = parity_signs(state.N)
    parity = float(np.sum(p * np.abs(a) ** 2))
    # d<P>/dtheta = -i <[P, J^x]>
    px = p * vec["x"]
    xp = apply_collective(DickeState(state.N, p * a), "x")
    dparity = float((-1j * np.vdot(a, px - xp)).real)
    return SpinMoments(state.N, mean, second, parity, dparity)


@lru_cache(maxsize=16)
def _jx_eigenbasis(N: int):
    off = _ladder(N) / 2
    w, v = eigh_tridiagonal(np.zeros(N + 1), off)
    return w, v


def p_jx_dicke(state: DickeState) -> np.ndarray:
    """P(J^x = m) for m = -N/2 .. N/2, from the J^x eigenbasis."""
    _, v = _jx_eigenbasis(state.N)
    p = np.abs(v.T @ state.amplitudes) ** 2
    return p / p.sum()


def rotor_frequencies(I_eff: float, M_max: int):
    """Planar-rotor lines seen in <J^x>(w) and <(J^y)^2>(w).

    Returns ``(jx_lines, jy2_lines)``; the latter also carries a static
    w = 0 component from M -> M transitions, not listed.
    """
    if I_eff <= 0:
        raise ValueError("I_eff must be positive")
    M = np.arange(M_max + 1)
    return (M + 0.5) / I_eff, 2.0 * (M + 1) / I_eff


def oat_series(N: int, I: float, times) -> list[dict]:
    spec = OatSpec(N, I)
    psi0 = css_x_dicke(N)
    ghz = ghz_dicke(N, ghz_branch(N)) if N % 2 == 0 else None
    plus, minus = css_x_dicke(N), css_mx_dicke(N)
    rows = []
    for t in times:
        psi = oat_evolve(psi0, spec, t)
        row = {"t": float(t)}
        row.update(dicke_observables(psi).as_row())
        fx, fmx = plus.overlap(psi), minus.overlap(psi)
        row["F_px"], row["F_mx"] = fx, fmx
        if ghz is not None:
            fg = ghz.overlap(psi)
            row["F_GHZ"] = fg
            row["C"] = 2 * fg - fx - fmx
        rows.append(row)
    return rows

"""Full Hilbert-space engine with J^z-sector blocks.

Computational states are bitmasks: bit i set means site i points up
(sigma_i = +1). Within a sector the basis is sorted numerically, and the
colex rank of a bitmask gives its position without a search.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as sla
from numba import njit
from scipy.special import comb

from .dicke import DickeState
from .model import XXModel
from .spin import SpinMoments

SIZE_CAP = 20
HARD_CAP = 24


class KrylovError(RuntimeError):
    pass


@njit(cache=True)
def _rank(s, binom):
    r = 0
    k = 0
    p = 0
    while s:
        if s & 1:
            k += 1
            r += binom[p, k]
        s >>= 1
        p += 1
    return r


@njit(cache=True)
def _sector_basis(N, nup, dim):
    out = np.empty(dim, np.int64)
    if nup == 0:
        out[0] = 0
        return out
    s = (1 << nup) - 1
    for r in range(dim):
        out[r] = s
        # Gosper's hack: next integer with the same popcount
        c = s & -s
        nxt = s + c
        s = (((nxt ^ s) >> 2) // c) | nxt
    return out


@njit(cache=True)
def _build_rows(basis, N, nup, binom, pair_index):
    dim = basis.size
    width = nup * (N - nup)
    cols = np.empty((dim, width), np.int32)
    pid = np.empty((dim, width), np.uint16)
    for r in range(dim):
        s = basis[r]
        c = 0
        for i in range(N):
            bi = (s >> i) & 1
            for j in range(i + 1, N):
                if ((s >> j) & 1) != bi:
                    t = s ^ ((1 << i) | (1 << j))
                    cols[r, c] = _rank(t, binom)
                    pid[r, c] = pair_index[i, j]
                    c += 1
    return cols, pid


@njit(cache=True)
def _matvec(cols, pid, weights, x, out):
    dim, width = cols.shape
    for r in range(dim):
        acc = 0.0 * x[0]
        for c in range(width):
            acc += weights[pid[r, c]] * x[cols[r, c]]
        out[r] = acc
    return out


def _binom_table(N):
    t = np.zeros((N + 1, N + 2), dtype=np.int64)
    for p in range(N + 1):
        for k in range(N + 2):
            t[p, k] = comb(p, k, exact=True) if k <= p else 0
    return t


@dataclass
class SectorBlock:
    """H restricted to the sector with ``nup`` up spins (M = nup - N/2)."""

    N: int
    nup: int
    basis: np.ndarray
    cols: np.ndarray
    pid: np.ndarray
    weights: np.ndarray

    @property
    def M(self) -> float:
        return self.nup - self.N / 2

    @property
    def dim(self) -> int:
        return self.basis.size

    def matvec(self, x):
        x = np.ascontiguousarray(x)
        if self.cols.shape[1] == 0:
            return np.zeros_like(x)
        return _matvec(self.cols, self.pid, self.weights, x, np.empty_like(x))

    def dense(self) -> np.ndarray:
        h = np.zeros((self.dim, self.dim))
        rows = np.repeat(np.arange(self.dim), self.cols.shape[1])
        h[rows, self.cols.ravel()] = self.weights[self.pid.ravel()]
        return h

    def operator(self) -> sla.LinearOperator:
        return sla.LinearOperator((self.dim, self.dim), matvec=lambda v: self.matvec(np.ravel(v)),
                                  dtype=float)


def _check_size(N, cap=SIZE_CAP):
    if N > HARD_CAP:
        raise ValueError(f"exact engine refuses N = {N} > {HARD_CAP}")
    if N > cap:
        raise ValueError(f"N = {N} exceeds the configured size cap {cap}")


def build_sector(model: XXModel, M: float, size_cap: int = SIZE_CAP) -> SectorBlock:
    N = model.N
    _check_size(N, size_cap)
    nup = M + N / 2
    if abs(M) > N / 2 or abs(nup - round(nup)) > 1e-9:
        raise ValueError(f"invalid sector M = {M} for N = {N}")
    nup = int(round(nup))
    iu = np.triu_indices(N, 1)
    pair_index = np.zeros((N, N), dtype=np.int64)
    pair_index[iu] = np.arange(iu[0].size)
    weights = model.flip_amplitude[iu].astype(float)
    binom = _binom_table(N)
    dim = int(comb(N, nup, exact=True))
    basis = _sector_basis(N, nup, dim)
    cols, pid = _build_rows(basis, N, nup, binom, pair_index)
    return SectorBlock(N, nup, basis, cols, pid, weights)


def build_blocks(model: XXModel, size_cap: int = SIZE_CAP) -> list[SectorBlock]:
    return [build_sector(model, nup - model.N / 2, size_cap) for nup in range(model.N + 1)]


@dataclass
class FullState:
    """Amplitudes stored per sector, ``blocks[nup]`` aligned with the sector basis."""

    N: int
    blocks: list
    bases: list = field(repr=False)

    def dense(self) -> np.ndarray:
        v = np.zeros(1 << self.N, dtype=complex)
        for b, a in zip(self.bases, self.blocks):
            v[b] = a
        return v

    @classmethod
    def from_dense(cls, vec, bases) -> "FullState":
        N = int(np.log2(len(vec)))
        return cls(N, [np.asarray(vec[b], dtype=complex) for b in bases], bases)

    def norm(self) -> float:
        return float(sum(np.vdot(a, a).real for a in self.blocks))

    def sector_weights(self) -> np.ndarray:
        return np.array([np.vdot(a, a).real for a in self.blocks])

    def copy(self) -> "FullState":
        return FullState(self.N, [a.copy() for a in self.blocks], self.bases)


def sector_bases(N: int) -> list[np.ndarray]:
    return [_sector_basis(N, k, int(comb(N, k, exact=True))) for k in range(N + 1)]


def css_x_full(N: int, bases=None, size_cap: int = SIZE_CAP) -> FullState:
    _check_size(N, size_cap)
    bases = bases if bases is not None else sector_bases(N)
    amp = 2.0 ** (-N / 2)
    return FullState(N, [np.full(b.size, amp, dtype=complex) for b in bases], bases)


def css_mx_dense(N: int) -> np.ndarray:
    return (2.0 ** (-N / 2)) * _parity_table(N).astype(complex)


def css_theta_dense(N: int, theta: float) -> np.ndarray:
    """CSS in the xy plane at azimuth theta: amplitudes exp(-i theta M)."""
    return (2.0 ** (-N / 2)) * np.exp(-1j * theta * _mz_table(N))


def ghz_dense(N: int, sign: int | None = None) -> np.ndarray:
    """(|CSS_x> + i*sign |CSS_-x>)/sqrt 2; sign follows N mod 4 by default."""
    if sign is None:
        sign = 1 if N % 4 == 0 else -1
    plus = np.full(1 << N, 2.0 ** (-N / 2), dtype=complex)
    return (plus + 1j * sign * css_mx_dense(N)) / np.sqrt(2)


def embed_dicke(state: DickeState) -> np.ndarray:
    """Symmetric computational-basis vector of a Dicke-sector state."""
    N = state.N
    nup = _popcount_table(N)
    norm = np.sqrt(np.array([comb(N, k) for k in range(N + 1)]))
    return state.amplitudes[nup] / norm[nup]


# ---------------------------------------------------------------- tables

_TABLES = {}


def _popcount_table(N):
    key = ("pop", N)
    if key not in _TABLES:
        idx = np.arange(1 << N, dtype=np.int64)
        pop = np.zeros(1 << N, dtype=np.int64)
        for i in range(N):
            pop += (idx >> i) & 1
        _TABLES[key] = pop
    return _TABLES[key]


def _mz_table(N):
    return _popcount_table(N) - N / 2


def _parity_table(N):
    key = ("par", N)
    if key not in _TABLES:
        _TABLES[key] = np.where((N - _popcount_table(N)) % 2 == 0, 1.0, -1.0)
    return _TABLES[key]


def _apply_sx_sum(psi, N, with_sign=False):
    """sum_i sigma^x_i psi, or sum_i sigma_i psi(flipped i) when with_sign."""
    idx = np.arange(psi.size, dtype=np.int64)
    out = np.zeros_like(psi)
    for i in range(N):
        flipped = psi[idx ^ (1 << i)]
        if with_sign:
            sig = 2 * ((idx >> i) & 1) - 1
            out += sig * flipped
        else:
            out += flipped
    return out


# ------------------------------------------------------------ dynamics


def expm_krylov(matvec, v, dt, tol=1e-10, m_max=60):
    """exp(-i H dt) v by Lanczos with full reorthogonalization.

    The subspace grows until the a-posteriori error estimate drops below
    ``tol``; if ``m_max`` is reached the step is split in two.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0.0 or dt == 0.0:
        return v.copy()
    n = v.size
    m_max = min(m_max, n)
    V = np.empty((m_max + 1, n), dtype=complex)
    V[0] = v / beta0
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    for j in range(m_max):
        w = matvec(V[j])
        alpha[j] = np.vdot(V[j], w).real
        w = w - alpha[j] * V[j]
        if j > 0:
            w -= beta[j - 1] * V[j - 1]
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        k = j + 1
        evals, evecs = np.linalg.eigh(np.diag(alpha[:k]) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1))
        y = evecs @ (np.exp(-1j * evals * dt) * evecs[0].conj())
        if beta[j] < 1e-13 * max(1.0, abs(alpha[j])):
            return beta0 * (V[:k].T @ y)
        err = beta0 * beta[j] * abs(y[-1])
        if err < tol:
            return beta0 * (V[:k].T @ y)
        if k < m_max:
            V[k] = w / beta[j]
    if abs(dt) < 1e-8:
        raise KrylovError("Krylov propagation failed to converge")
    half = expm_krylov(matvec, v, dt / 2, tol / 2, m_max)
    return expm_krylov(matvec, half, dt / 2, tol / 2, m_max)


def propagate(state: FullState, blocks, dt: float, tol: float = 1e-8) -> FullState:
    """Apply exp(-i H dt) sector by sector; sectors never mix."""
    out = []
    for blk, a in zip(blocks, state.blocks):
        if blk.dim == 1 or blk.cols.shape[1] == 0:
            out.append(a.copy())
        else:
            out.append(expm_krylov(blk.matvec, a, dt, tol))
    return FullState(state.N, out, state.bases)


def energy(state: FullState, blocks) -> float:
    return float(sum(np.vdot(a, blk.matvec(a)).real for blk, a in zip(blocks, state.blocks)))


# ---------------------------------------------------------- observables


def overlap_full(state, reference) -> float:
    a = state.dense() if isinstance(state, FullState) else np.asarray(state)
    b = reference.dense() if isinstance(reference, FullState) else np.asarray(reference)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(abs(np.vdot(b, a)) ** 2)


def moments_dense(psi, N) -> SpinMoments:
    sx = _apply_sx_sum(psi, N)
    jx = 0.5 * sx
    jy = -0.5j * _apply_sx_sum(psi, N, with_sign=True)
    jz = _mz_table(N) * psi
    vec = [jx, jy, jz]
    mean = np.array([np.vdot(psi, u).real for u in vec])
    second = np.array([[np.vdot(u, v).real for v in vec] for u in vec])
    par = _parity_table(N)
    parity = float(np.sum(par * np.abs(psi) ** 2))
    # d<P>/dtheta = <sum_j sigma^y_j prod_{i != j} sigma^z_i> = Re <psi| -2i P J^x |psi>
    dparity = float(np.vdot(psi, -2j * par * jx).real)
    return SpinMoments(N, mean, second, parity, dparity)


def full_observables(state, ghz_sign: int | None = None) -> dict:
    psi = state.dense() if isinstance(state, FullState) else np.asarray(state)
    N = int(np.log2(psi.size))
    row = moments_dense(psi, N).as_row()
    f_px = overlap_full(psi, np.full(psi.size, 2.0 ** (-N / 2)))
    f_mx = overlap_full(psi, css_mx_dense(N))
    f_ghz = overlap_full(psi, ghz_dense(N, ghz_sign))
    row.update(F_px=f_px, F_mx=f_mx, F_GHZ=f_ghz, C=2 * f_ghz - f_px - f_mx)
    return row


def rotate_to_x_basis(psi, N) -> np.ndarray:
    """Amplitudes in the product sigma^x eigenbasis; bit set means +x."""
    v = np.asarray(psi, dtype=complex).copy()
    s = 1 / np.sqrt(2)
    for i in range(N):
        w = v.reshape(-1, 2, 1 << i)
        lo, hi = w[:, 0, :].copy(), w[:, 1, :].copy()
        w[:, 1, :] = s * (hi + lo)
        w[:, 0, :] = s * (hi - lo)
    return v


def p_jx_full(state) -> np.ndarray:
    """P(J^x = m) for m = -N/2 .. N/2."""
    psi = state.dense() if isinstance(state, FullState) else np.asarray(state)
    N = int(np.log2(psi.size))
    rot = rotate_to_x_basis(psi, N)
    return np.bincount(_popcount_table(N), weights=np.abs(rot) ** 2, minlength=N + 1)


# ------------------------------------------------------------- spectra


@dataclass
class SpectrumRecord:
    N: int
    energies: dict  # M -> ascending eigenvalues
    overlaps: dict  # M -> |<n|CSS_x>|^2
    residuals: dict
    tos_index: dict  # M -> index of the tower-of-states member

    def tos_energy(self, M) -> float:
        return float(self.energies[M][self.tos_index[M]])

    def rows(self) -> list[dict]:
        out = []
        for M in sorted(self.energies):
            for n, (e, o) in enumerate(zip(self.energies[M], self.overlaps[M])):
                out.append({"M": M, "n": n, "E": float(e), "overlap": float(o),
                            "is_tos": int(n == self.tos_index[M])})
        return out


def sector_spectrum(blocks, k: int = 4, dense_below: int = 400, tol: float = 1e-10) -> SpectrumRecord:
    """Lowest ``k`` eigenpairs per sector and their weight in CSS_x.

    The tower-of-states member of a sector is the state with the largest
    CSS_x overlap among those computed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    energies, overlaps, residuals, tos = {}, {}, {}, {}
    for blk in blocks:
        N = blk.N
        if blk.dim <= dense_below:
            w, v = np.linalg.eigh(blk.dense())
            w, v = w[:k], v[:, :k]
        else:
            # extra pairs and a wide subspace so degenerate copies are not lost
            kk = min(k + 6, blk.dim - 1)
            w, v = sla.eigsh(blk.operator(), k=kk, which="SA", tol=tol,
                             ncv=min(blk.dim, max(4 * kk, 40)),
                             v0=np.random.default_rng(blk.nup).normal(size=blk.dim))
            order = np.argsort(w)[:k]
            w, v = w[order], v[:, order]
        res = np.array([np.linalg.norm(blk.matvec(v[:, n]) - w[n] * v[:, n]) for n in range(len(w))])
        ov = np.abs(v.sum(axis=0)) ** 2 * 2.0 ** (-N)
        M = blk.M
        energies[M], overlaps[M], residuals[M] = w, ov, res
        tos[M] = int(np.argmax(ov)) if ov.max() > 0 else 0
    return SpectrumRecord(blocks[0].N, energies, overlaps, residuals, tos)


# ---------------------------------------------------------- checkpoints

_MAGIC = b"DXXS"
_VERSION = 1


def save_checkpoint(path, state: FullState, t: float, meta: dict | None = None):
    sizes = [int(a.size) for a in state.blocks]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).tolist()
    header = {"version": _VERSION, "N": state.N, "t": float(t), "offsets": offsets}
    header.update(meta or {})
    hb = json.dumps(header, sort_keys=True).encode()
    data = np.concatenate(state.blocks).astype(np.complex128) if sizes else np.zeros(0, complex)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", _VERSION, len(hb)) + hb)
        fh.write(data.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a state checkpoint")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen))
        data = np.frombuffer(fh.read(), dtype=np.complex128)
    off = header["offsets"]
    N = header["N"]
    blocks = [data[off[k]:off[k + 1]].copy() for k in range(len(off) - 1)]
    return FullState(N, blocks, sector_bases(N)), header


# -------------------------------------------------------------- driver


def evolve(model: XXModel, times, blocks=None, state=None, pjx_times=(), tol: float = 1e-8,
           size_cap: int = SIZE_CAP, on_step=None):
    """Propagate CSS_x over ``times`` and record observables at each.

    Returns ``(rows, pjx, final_state)`` where ``pjx`` maps requested times
    (matched to the nearest grid point) to P(J^x) tables.
    """
    blocks = blocks or build_blocks(model, size_cap)
    state = state or css_x_full(model.N, [b.basis for b in blocks], size_cap)
    times = np.asarray(times, dtype=float)
    want = {int(np.argmin(abs(times - tp))): tp for tp in pjx_times}
    rows, pjx = [], {}
    t_prev = times[0]
    if t_prev != 0.0:
        state = propagate(state, blocks, t_prev, tol)
    for n, t in enumerate(times):
        if t != t_prev:
            state = propagate(state, blocks, t - t_prev, tol)
            t_prev = t
        row = {"t": float(t), "t_kac": float(model.kac_time(t))}
        row.update(full_observables(state))
        row["energy"] = energy(state, blocks)
        rows.append(row)
        if n in want:
            pjx[want[n]] = p_jx_full(state)
        if on_step is not None:
            on_step(n, t, state)
    return rows, pjx, state

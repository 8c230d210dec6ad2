"""Pair-product (spin-Jastrow) wavefunctions and their Monte Carlo estimators.

Spins are sigma_i = +1 (up) / -1 (down). The log-amplitude is

    log Psi(sigma) = sum_{j<k} [f_d sigma_j sigma_k + g_d (sigma_j + sigma_k)] + h sum_j sigma_j

with ``d = d(j, k)`` the displacement class of the pair. Written with the
pair matrix ``F_jk = f_d(j,k)`` and site field ``b_j = sum_k g_d(j,k) + h``,
it is ``0.5 sigma.F.sigma + b.sigma``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit

from .lattice import CouplingTable
from .model import XXModel
from .spin import SpinMoments

PARAM_FORMAT_VERSION = 1


PHASE_ONLY_TOL = 1e-12


@dataclass(frozen=True)
class PairProductParams:
    table: CouplingTable
    f: np.ndarray
    g: np.ndarray
    h: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, dtype=complex).copy())
        object.__setattr__(self, "g", np.asarray(self.g, dtype=complex).copy())
        object.__setattr__(self, "h", complex(self.h))
        n = self.table.n_classes
        if self.f.shape != (n,) or self.g.shape != (n,):
            raise ValueError(f"expected {n} class parameters")

    @property
    def N(self) -> int:
        return self.table.N

    @property
    def n_params(self) -> int:
        return 2 * self.table.n_classes + 1

    def vector(self) -> np.ndarray:
        return np.concatenate([self.f, self.g, [self.h]])

    @classmethod
    def from_vector(cls, table: CouplingTable, x) -> "PairProductParams":
        n = table.n_classes
        x = np.asarray(x, dtype=complex)
        return cls(table, x[:n], x[n:2 * n], x[2 * n])

    @cached_property
    def pair_matrix(self) -> np.ndarray:
        F = self.f[np.maximum(self.table.class_of, 0)]
        np.fill_diagonal(F, 0)
        return F

    @cached_property
    def site_field(self) -> np.ndarray:
        G = self.g[np.maximum(self.table.class_of, 0)]
        np.fill_diagonal(G, 0)
        return G.sum(axis=1) + self.h

    @property
    def phase_only(self) -> bool:
        """True when |Psi| is constant (up to round-off), so |Psi|^2 is uniform."""
        tol = PHASE_ONLY_TOL
        return bool(np.all(np.abs(self.f.real) <= tol) and np.all(np.abs(self.g.real) <= tol)
                    and abs(self.h.real) <= tol)

    def to_dict(self) -> dict:
        rows = []
        for d, rep in enumerate(self.table.class_reps):
            rows.append({"class_id": d, "displacement": [int(rep[0]), int(rep[1])],
                         "re_f": self.f[d].real, "im_f": self.f[d].imag,
                         "re_g": self.g[d].real, "im_g": self.g[d].imag})
        return {"version": PARAM_FORMAT_VERSION, "lattice": self.table.spec.label(),
                "N": self.N, "classes": rows, "re_h": self.h.real, "im_h": self.h.imag}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, table: CouplingTable, data: dict) -> "PairProductParams":
        if data.get("version") != PARAM_FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format {data.get('version')}")
        if data["N"] != table.N or len(data["classes"]) != table.n_classes:
            raise ValueError("parameter snapshot does not match the lattice")
        f = [c["re_f"] + 1j * c["im_f"] for c in data["classes"]]
        g = [c["re_g"] + 1j * c["im_g"] for c in data["classes"]]
        return cls(table, f, g, data["re_h"] + 1j * data["im_h"])


def zero_params(table: CouplingTable) -> PairProductParams:
    """All-zero parameters: the uniform superposition CSS_x."""
    n = table.n_classes
    return PairProductParams(table, np.zeros(n), np.zeros(n), 0)


def css_theta_params(table: CouplingTable, theta: float) -> PairProductParams:
    """CSS in the xy plane at azimuth theta, i.e. exp(-i theta J^z)|CSS_x>.

    Each site enters N - 1 unordered pairs, so the per-pair weight is
    -i theta / (2 (N - 1)).
    """
    n, N = table.n_classes, table.N
    return PairProductParams(table, np.zeros(n), np.full(n, -1j * theta / (2 * (N - 1))), 0)


def css_mx_params(table: CouplingTable) -> PairProductParams:
    return css_theta_params(table, np.pi)


def oat_snapshot_params(table: CouplingTable, I: float, t: float) -> PairProductParams:
    """exp(-i t (J^z)^2 / 2I)|CSS_x> as a pair product.

    (J^z)^2 = N/4 + (1/2) sum_{j<k} sigma_j sigma_k, so every pair carries
    f = -i t / (4 I) and the remainder is a global phase.
    """
    n = table.n_classes
    return PairProductParams(table, np.full(n, -1j * t / (4 * I)), np.zeros(n), 0)


def ghz_params(table: CouplingTable) -> PairProductParams:
    """prod_{j<k} exp(-i pi/2 delta(sigma_j, sigma_k)), the GHZ state reached by OAT at t = pi I.

    It equals (|CSS_x> + i|CSS_-x>)/sqrt 2 for N = 0 mod 4 and the minus
    branch for N = 2 mod 4, with |-x> = (|up> - |down>)/sqrt 2.
    """
    n = table.n_classes
    return PairProductParams(table, np.full(n, -1j * np.pi / 4), np.zeros(n), 0)


# ------------------------------------------------------------ amplitudes


def sigma_from_bits(bits, N) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    return (2 * ((bits[..., None] >> np.arange(N)) & 1) - 1).astype(np.int8)


def bits_from_sigma(sigma) -> np.ndarray:
    sigma = np.asarray(sigma)
    return (((sigma + 1) // 2).astype(np.int64) << np.arange(sigma.shape[-1])).sum(axis=-1)


def log_amplitude(params: PairProductParams, sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    return 0.5 * np.einsum("...i,...i->...", s @ params.pair_matrix, s) + s @ params.site_field


def local_fields(params: PairProductParams, sigma) -> np.ndarray:
    """theta_i = sum_k F_ik sigma_k."""
    return np.asarray(sigma, dtype=float) @ params.pair_matrix


def flip_log_ratio(params: PairProductParams, sigma, theta=None) -> np.ndarray:
    """log Psi(sigma with spin i flipped) - log Psi(sigma), for every i."""
    s = np.asarray(sigma, dtype=float)
    if theta is None:
        theta = local_fields(params, s)
    return -2.0 * s * (theta + params.site_field)


def dense_vector(params: PairProductParams, normalize: bool = True) -> np.ndarray:
    """Amplitudes over all 2^N bitmasks (bit i set = sigma_i = +1)."""
    N = params.N
    if N > 24:
        raise ValueError("dense contraction limited to N <= 24")
    sig = sigma_from_bits(np.arange(1 << N), N)
    la = log_amplitude(params, sig)
    v = np.exp(la - la.real.max())
    if normalize:
        v /= np.linalg.norm(v)
    return v


# --------------------------------------------------------------- sampling


@dataclass
class SampleBatch:
    """Configurations drawn from |Psi|^2.

    ``sigma`` has shape (n_records * n_walkers, N) ordered walker-major, so
    the samples of one walker are contiguous. ``weights`` is set only for
    exhaustive enumeration, in which case averages are exact.
    """

    sigma: np.ndarray
    n_walkers: int
    n_records: int
    log_psi: np.ndarray
    weights: np.ndarray | None = None
    acceptance: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    walkers: np.ndarray | None = None  # final walker state for warm starts

    @property
    def size(self) -> int:
        return self.sigma.shape[0]

    @property
    def exact(self) -> bool:
        return self.weights is not None


def enumerate_batch(params: PairProductParams) -> SampleBatch:
    """Every configuration weighted by |Psi|^2 / <Psi|Psi>."""
    N = params.N
    if N > 22:
        raise ValueError("exhaustive enumeration limited to N <= 22")
    sig = sigma_from_bits(np.arange(1 << N), N)
    la = log_amplitude(params, sig)
    w = np.exp(2 * (la.real - la.real.max()))
    w /= w.sum()
    return SampleBatch(sig, 1, sig.shape[0], la, weights=w, schedule={"mode": "exact"})


def metropolis_sample(params: PairProductParams, n_walkers: int = 1000, n_records: int = 10,
                      seed=None, burn_in: int | None = None, decorrelation: int | None = None,
                      init=None, p_exchange: float = 0.5, p_global: float = 0.05) -> SampleBatch:
    """Sample |Psi|^2 with vectorized walkers.

    Proposals are exchanges of two random sites (a no-op when the spins
    agree) with probability ``p_exchange``, global flips sigma -> -sigma with
    probability ``p_global`` (these connect the two halves of a Z2 double
    well, where local moves stall), and single spin flips otherwise. ``burn_in``
    is in sweeps of N proposals (default 10 N without ``init``, 2 with a warm
    start); ``decorrelation`` is the number of proposals between records
    (default N). Phase-only states are sampled directly and exactly.
    """
    if n_walkers < 1:
        raise ValueError("n_walkers must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    N = params.N
    if params.phase_only:
        sig = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n_walkers * n_records, N))
        return SampleBatch(sig, n_walkers, n_records, log_amplitude(params, sig),
                           acceptance={"flip": 1.0, "exchange": 1.0},
                           schedule={"mode": "iid", "walkers": n_walkers, "records": n_records})

    if burn_in is None:
        burn_in = 10 * N if init is None else 2
    if decorrelation is None:
        decorrelation = N
    # acceptance only involves |Psi|^2, so the real parts suffice
    F = np.ascontiguousarray(params.pair_matrix.real)
    b = np.ascontiguousarray(params.site_field.real)
    if init is None:
        sig = rng.choice(np.array([-1.0, 1.0]), size=(n_walkers, N))
    else:
        sig = np.array(init, dtype=float)
        if sig.shape != (n_walkers, N):
            raise ValueError("warm-start configuration has the wrong shape")
    theta = sig @ F
    if p_exchange < 0 or p_global < 0 or p_exchange + p_global > 1:
        raise ValueError("move probabilities must be non-negative and sum to at most 1")
    stats = np.zeros(6, dtype=np.int64)

    def advance(n_steps):
        # random numbers are drawn in bounded chunks to cap memory
        chunk = max(1, 2_000_000 // (4 * n_walkers))
        done = 0
        while done < n_steps:
            m = min(chunk, n_steps - done)
            i = rng.integers(N, size=(m, n_walkers))
            j = rng.integers(N, size=(m, n_walkers))
            move = rng.random((m, n_walkers))
            logu = np.log(rng.random((m, n_walkers)) + 1e-300)
            _metropolis_block(sig, theta, F, b, i, j, move, p_exchange, p_exchange + p_global, logu, stats)
            done += m

    advance(burn_in * N)
    out = np.empty((n_records, n_walkers, N), dtype=np.int8)
    for r in range(n_records):
        advance(decorrelation)
        out[r] = sig
    walker_major = out.transpose(1, 0, 2).reshape(n_walkers * n_records, N)
    acceptance = {"flip": stats[1] / stats[0] if stats[0] else np.nan,
                  "exchange": stats[3] / stats[2] if stats[2] else np.nan,
                  "global": stats[5] / stats[4] if stats[4] else np.nan}
    return SampleBatch(walker_major, n_walkers, n_records, log_amplitude(params, walker_major),
                       acceptance=acceptance,
                       schedule={"mode": "metropolis", "walkers": n_walkers, "records": n_records,
                                 "burn_in_sweeps": burn_in, "decorrelation": decorrelation},
                       walkers=sig.astype(np.int8))


@njit(cache=True)
def _metropolis_block(sig, theta, F, b, ii, jj, move, cut_exchange, cut_global, logu, stats):
    """Advance every walker by ``ii.shape[0]`` proposals, updating fields in place.

    ``move`` < cut_exchange proposes an exchange, < cut_global a global flip,
    otherwise a single flip. stats holds tried/accepted counts for flips,
    exchanges and global flips.
    """
    n_walkers, N = sig.shape
    for s in range(ii.shape[0]):
        for w in range(n_walkers):
            u = move[s, w]
            if u < cut_exchange:
                i = ii[s, w]
                j = jj[s, w]
                si = sig[w, i]
                sj = sig[w, j]
                if si == sj:
                    continue
                delta = -2.0 * si * (theta[w, i] + b[i]) - 2.0 * sj * (theta[w, j] + b[j]) \
                    + 4.0 * F[i, j] * si * sj
                stats[2] += 1
                if logu[s, w] < 2.0 * delta:
                    stats[3] += 1
                    for k in range(N):
                        theta[w, k] -= 2.0 * (si * F[i, k] + sj * F[j, k])
                    sig[w, i] = -si
                    sig[w, j] = -sj
            elif u < cut_global:
                # the pair term is even in sigma, only the field term changes
                delta = 0.0
                for k in range(N):
                    delta -= 2.0 * b[k] * sig[w, k]
                stats[4] += 1
                if logu[s, w] < 2.0 * delta:
                    stats[5] += 1
                    for k in range(N):
                        theta[w, k] = -theta[w, k]
                        sig[w, k] = -sig[w, k]
            else:
                i = ii[s, w]
                si = sig[w, i]
                delta = -2.0 * si * (theta[w, i] + b[i])
                stats[0] += 1
                if logu[s, w] < 2.0 * delta:
                    stats[1] += 1
                    for k in range(N):
                        theta[w, k] -= 2.0 * si * F[i, k]
                    sig[w, i] = -si


# -------------------------------------------------------------- statistics


def blocking_error(x) -> float:
    """Standard error of the mean of a correlated series by block doubling.

    Returns the largest error over block levels with at least 16 blocks,
    which sits on the plateau for a converged series.
    """
    x = np.asarray(x, dtype=float)
    best = x.std(ddof=1) / np.sqrt(x.size) if x.size > 1 else 0.0
    while x.size >= 32:
        x = 0.5 * (x[: x.size // 2 * 2 : 2] + x[1 : x.size // 2 * 2 : 2])
        best = max(best, x.std(ddof=1) / np.sqrt(x.size))
    return float(best)


def block_means(values, batch: SampleBatch, min_blocks: int = 32):
    """Group local values (n_samples, k) into independent blocks.

    Walkers are independent chains, so per-walker means are used as blocks
    when there are enough walkers; otherwise the single chain is cut into
    ``min_blocks`` contiguous blocks.
    """
    values = np.asarray(values)
    if batch.n_walkers >= min_blocks:
        return values.reshape(batch.n_walkers, batch.n_records, -1).mean(axis=1)
    nb = min(min_blocks, values.shape[0])
    usable = values.shape[0] // nb * nb
    return values[:usable].reshape(nb, usable // nb, -1).mean(axis=1)


def jackknife(groups, func):
    """Mean and error of ``func(*means)`` over independent block groups.

    ``groups`` is a list of block-mean arrays (n_blocks_g, k_g) from
    independent samples; variances of the groups add.
    """
    means = [g.mean(axis=0) for g in groups]
    value = func(*means)
    var = np.zeros(np.shape(value))
    for gi, g in enumerate(groups):
        nb = g.shape[0]
        if nb < 2:
            continue
        total = g.sum(axis=0)
        reps = []
        for k in range(nb):
            m = list(means)
            m[gi] = (total - g[k]) / (nb - 1)
            reps.append(func(*m))
        reps = np.asarray(reps, dtype=float)
        var = var + (nb - 1) / nb * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0)
    return value, np.sqrt(var)


# ------------------------------------------------------------- estimators

# column order of the local-value table
_LOCAL = ["Jx", "Jy", "Jz", "Jx2", "Jy2", "Jz2", "JxJy", "JxJz", "JyJz", "P", "dP", "E"]


def local_values(params: PairProductParams, sigma, model: XXModel | None = None) -> np.ndarray:
    """Per-configuration local estimators, real parts, shape (n, 12)."""
    s = np.asarray(sigma, dtype=float)
    N = s.shape[1]
    F = params.pair_matrix
    u = flip_log_ratio(params, s)
    r1 = np.exp(u)
    up = s > 0
    vp = np.where(up, r1, 0)
    vm = np.where(up, 0, r1)
    Ap = np.exp(4 * F)
    Am = np.exp(-4 * F)
    np.fill_diagonal(Ap, 0)
    np.fill_diagonal(Am, 0)
    pp = np.einsum("si,si->s", vp @ Ap, vp)
    mm = np.einsum("si,si->s", vm @ Ap, vm)
    pm = np.einsum("si,si->s", vp @ Am, vm)
    M = 0.5 * s.sum(axis=1)
    jx = 0.5 * r1.sum(axis=1)
    jy = 0.5 * (-1j * s * r1).sum(axis=1)
    jx2 = 0.25 * (N + pp + mm + 2 * pm)
    jy2 = 0.25 * (N - (pp + mm - 2 * pm))
    jxjy = 0.25 * (-1j) * (pp - mm)
    jxjz = 0.25 * np.sum(r1 * (2 * M[:, None] - s), axis=1)
    jyjz = 0.25 * np.sum(-1j * s * r1 * (2 * M[:, None] - s), axis=1)
    par = np.prod(s, axis=1)
    dpar = -2j * par * jx
    if model is not None:
        W = model.flip_amplitude * Am
        e = np.einsum("si,si->s", vp @ W, vm)
    else:
        e = np.zeros(s.shape[0])
    cols = [jx, jy, M, jx2, jy2, M**2, jxjy, jxjz, jyjz, par, dpar, e]
    return np.stack([np.real(c) for c in cols], axis=1)


def _moments_from_means(m, N):
    mean = m[0:3]
    second = np.array([[m[3], m[6], m[7]], [m[6], m[4], m[8]], [m[7], m[8], m[5]]])
    return SpinMoments(N, mean, second, m[9], m[10])


def estimate_observables(params: PairProductParams, batch: SampleBatch, model: XXModel | None = None) -> dict:
    """Collective-spin, parity and energy estimates with error bars (``*_err``)."""
    N = params.N
    loc = local_values(params, batch.sigma, model)
    bad = ~np.all(np.isfinite(loc), axis=1)
    if bad.any():
        loc = loc[~bad]
    if batch.exact:
        w = batch.weights[~bad] if bad.any() else batch.weights
        m = (w[:, None] * loc).sum(axis=0) / w.sum()
        sm = _moments_from_means(m, N)
        row = sm.as_row()
        row["E"] = m[11]
        row.update({f"{k}_err": 0.0 for k in list(row)})
        row["rejected"] = int(bad.sum())
        return row
    if bad.any():
        raise FloatingPointError(f"{bad.sum()} configurations with non-finite local values")
    blocks = block_means(loc, batch)

    def derived(m):
        sm = _moments_from_means(m, N)
        xi2 = sm.xi2
        return np.array([sm.mean[0], sm.mean[1], sm.mean[2], sm.second[0, 0], sm.second[1, 1],
                         sm.second[2, 2], sm.var("x"), sm.var("y"), sm.var("z"), sm.second[1, 2],
                         sm.J2, xi2 if np.isfinite(xi2) else 1e300, m[9], m[10], m[11]])

    val, err = jackknife([blocks], derived)
    names = ["Jx", "Jy", "Jz", "Jx2", "Jy2", "Jz2", "VarJx", "VarJy", "VarJz", "JyJz_sym", "J2",
             "xi2", "parity", "dparity_dtheta", "E"]
    row = {}
    for k, v, e in zip(names, val, err):
        row[k] = float(v)
        row[f"{k}_err"] = float(e)
    row["rejected"] = 0
    return row


def _ratio_blocks(log_num, log_den, batch: SampleBatch, shift):
    """Block means of Psi_num/Psi_den over a batch, scaled by exp(-shift)."""
    r = np.exp(log_num - log_den - shift)
    vals = np.stack([r.real, r.imag], axis=1)
    if batch.exact:
        return (batch.weights[:, None] * vals).sum(axis=0)[None, :]
    return block_means(vals, batch)


def overlap_terms(params_a: PairProductParams, batch_a: SampleBatch,
                  params_b: PairProductParams, batch_b: SampleBatch):
    """Block means for the two ratio factors of the overlap estimator.

    Returns ``(blocks_a, blocks_b, diagnostics)``; the squared overlap is
    Re[(a_re + i a_im)(b_re + i b_im)].
    """
    la_a = log_amplitude(params_a, batch_a.sigma)
    lb_a = log_amplitude(params_b, batch_a.sigma)
    la_b = log_amplitude(params_a, batch_b.sigma)
    lb_b = log_amplitude(params_b, batch_b.sigma)
    # the shift cancels in the product; it only keeps exponents bounded
    shift = complex(np.median((lb_a - la_a).real), 0.0)
    ba = _ratio_blocks(lb_a, la_a, batch_a, shift)
    bb = _ratio_blocks(la_b, lb_b, batch_b, -shift)
    diag = {}
    for name, lr, batch in (("a", (lb_a - la_a - shift).real, batch_a), ("b", (la_b - lb_b + shift).real, batch_b)):
        if batch.exact:
            continue
        top = lr.max()
        # share of the largest single term in the ratio sum, computed in log space
        diag[f"max_weight_{name}"] = float(1.0 / np.sum(np.exp(lr - top)))
    return ba, bb, diag


def _overlap_func(a, b):
    return np.real((a[0] + 1j * a[1]) * (b[0] + 1j * b[1]))


def estimate_overlap(params_a, batch_a, params_b, batch_b) -> tuple[float, float, dict]:
    """|<A|B>|^2 / (<A|A><B|B>) as the product of two sampled ratio means."""
    ba, bb, diag = overlap_terms(params_a, batch_a, params_b, batch_b)
    val, err = jackknife([ba, bb], _overlap_func)
    diag["heavy_tail"] = bool(err > abs(val))
    return float(val), float(err), diag


def reference_batch(table: CouplingTable, n_samples: int, seed=None) -> SampleBatch:
    """Uniform configurations, the exact |Psi|^2 of every phase-only reference."""
    return metropolis_sample(zero_params(table), n_walkers=n_samples, n_records=1, seed=seed)


def estimate_fidelities(params: PairProductParams, batch: SampleBatch, ref_batch: SampleBatch,
                        qcat_refs: dict | None = None) -> dict:
    """F_GHZ, F_px, F_mx and C = 2 F_GHZ - F_px - F_mx with joint errors.

    ``ref_batch`` must sample |Psi_ref|^2 of the phase-only references
    (uniform). Extra q-cat references map a label to their parameters.
    """
    table = params.table
    refs = {"F_GHZ": ghz_params(table), "F_px": zero_params(table), "F_mx": css_mx_params(table)}
    refs.update(qcat_refs or {})
    names = list(refs)
    ref_blocks, psi_blocks = [], []
    for name in names:
        ra, pb, _ = overlap_terms(refs[name], ref_batch, params, batch)
        ref_blocks.append(ra)
        psi_blocks.append(pb)
    k = len(names)
    # all references share ref_batch and the state shares batch: two independent groups
    group_ref = np.concatenate(ref_blocks, axis=1)
    group_psi = np.concatenate(psi_blocks, axis=1)

    def func(a, b):
        fs = np.array([_overlap_func(a[2 * i:2 * i + 2], b[2 * i:2 * i + 2]) for i in range(k)])
        c = 2 * fs[0] - fs[1] - fs[2]
        return np.concatenate([fs, [c]])

    val, err = jackknife([group_ref, group_psi], func)
    row = {}
    for i, name in enumerate(names + ["C"]):
        row[name] = float(val[i])
        row[f"{name}_err"] = float(err[i])
    return row

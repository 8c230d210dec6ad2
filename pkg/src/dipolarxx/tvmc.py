"""Time-dependent variational Monte Carlo for pair-product states."""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import pairproduct as pp
from .model import XXModel


class TvmcError(RuntimeError):
    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


@dataclass
class TvmcConfig:
    dt: float = 0.05
    t_max: float = 1.0
    measure_every: int = 1
    sampler: str = "metropolis"  # or "exact" (full enumeration, N <= 22)
    n_walkers: int = 1000
    n_records: int = 10
    burn_in: int | None = None
    decorrelation: int | None = None
    epsilon: float = 1e-3
    epsilon0: float = 1e-6
    solver: str = "shift"  # or "pinv"
    pinv_cutoff: float = 1e-6
    n_reference: int = 10000
    fidelities: bool = True
    qcat: tuple = ()
    residual_limit: float = 1e-2
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["qcat"] = list(self.qcat)
        return d


@dataclass
class TdvpStep:
    t: float
    S: np.ndarray
    F: np.ndarray
    xdot: np.ndarray
    epsilon: float
    residual: float
    condition: float


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    params: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------- derivatives


def log_derivatives(params: pp.PairProductParams, sigma) -> np.ndarray:
    """O_k = d log Psi / d x_k for x = (f_d, g_d, h); real, shape (n, 2 n_classes + 1).

    Pair sums per class come from periodic spin correlations computed with
    an FFT over the cell.
    """
    table = params.table
    spec = table.spec
    s = np.asarray(sigma, dtype=float)
    n = s.shape[0]
    lx, ly = spec.shape
    grid = s.reshape(n, ly, lx)
    ft = np.fft.fft2(grid)
    corr = np.fft.ifft2(np.conj(ft) * ft).real.reshape(n, -1)
    cls = table.displacement_class.ravel()
    onehot = np.zeros((lx * ly, table.n_classes))
    valid = cls >= 0
    onehot[np.nonzero(valid)[0], cls[valid]] = 0.5
    o_f = corr @ onehot
    total = s.sum(axis=1)
    per_site = 2.0 * table.class_size / table.N
    o_g = total[:, None] * per_site[None, :]
    return np.concatenate([o_f, o_g, total[:, None]], axis=1)


def local_energy(params: pp.PairProductParams, sigma, model: XXModel) -> np.ndarray:
    """E_loc(sigma) = sum_{i<j, sigma_i != sigma_j} <sigma|H|sigma^{ij}> Psi(sigma^{ij})/Psi(sigma)."""
    s = np.asarray(sigma, dtype=float)
    F = params.pair_matrix
    r1 = np.exp(pp.flip_log_ratio(params, s))
    up = s > 0
    vp = np.where(up, r1, 0)
    vm = np.where(up, 0, r1)
    W = model.flip_amplitude * np.exp(-4 * F)
    return np.einsum("si,si->s", vp @ W, vm)


def _weighted_cov(a, b, w):
    am = a - (w[:, None] * a).sum(axis=0)
    bm = b - (w[:, None] * b).sum(axis=0) if b.ndim == 2 else b - (w * b).sum()
    if b.ndim == 1:
        return (w[:, None] * am).T.conj() @ bm
    return (w[:, None] * am).T.conj() @ bm


def tdvp_rhs(params: pp.PairProductParams, batch: pp.SampleBatch, model: XXModel,
             epsilon: float = 1e-3, epsilon0: float = 1e-6, solver: str = "shift",
             pinv_cutoff: float = 1e-6, t: float = 0.0) -> TdvpStep:
    """Solve (S + epsilon diag S + epsilon0) xdot = -i F for the parameter velocity."""
    O = log_derivatives(params, batch.sigma)
    E = local_energy(params, batch.sigma, model)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("non-finite local energy")
    if batch.exact:
        w = batch.weights
    else:
        w = np.full(batch.size, 1.0 / batch.size)
    S = _weighted_cov(O, O, w).real
    F = _weighted_cov(O, E, w)
    rhs = -1j * F
    if solver == "shift":
        A = S + epsilon * np.diag(np.diag(S)) + epsilon0 * np.eye(S.shape[0])
        xdot = np.linalg.solve(A, rhs)
    elif solver == "pinv":
        evals, evecs = np.linalg.eigh(S)
        keep = evals > pinv_cutoff * evals.max()
        inv = np.where(keep, 1.0 / np.where(keep, evals, 1.0), 0.0)
        xdot = evecs @ (inv * (evecs.T @ rhs))
    else:
        raise ValueError(f"unknown solver {solver!r}")
    fn = np.linalg.norm(F)
    residual = float(np.linalg.norm(S @ xdot - rhs) / fn) if fn > 0 else 0.0
    ev = np.linalg.eigvalsh(S)
    cond = float(ev[-1] / max(ev[0], 1e-300)) if ev[-1] > 0 else np.inf
    return TdvpStep(t, S, F, xdot, epsilon, residual, cond)


# ------------------------------------------------------------ integration


class _Sampler:
    def __init__(self, model, cfg: TvmcConfig, rng):
        self.model, self.cfg, self.rng = model, cfg, rng
        self.walkers = None

    def __call__(self, params):
        cfg = self.cfg
        if cfg.sampler == "exact":
            return pp.enumerate_batch(params)
        if cfg.sampler != "metropolis":
            raise ValueError(f"unknown sampler {cfg.sampler!r}")
        burn = cfg.burn_in if self.walkers is None else 2
        batch = pp.metropolis_sample(params, cfg.n_walkers, cfg.n_records, seed=self.rng,
                                     burn_in=burn, decorrelation=cfg.decorrelation,
                                     init=self.walkers)
        if batch.walkers is not None:
            self.walkers = batch.walkers
        return batch


def measure(params: pp.PairProductParams, batch: pp.SampleBatch, model: XXModel, cfg: TvmcConfig,
            rng, qcat_refs=None) -> dict:
    row = pp.estimate_observables(params, batch, model)
    if cfg.fidelities:
        if batch.exact:
            ref = pp.enumerate_batch(pp.zero_params(params.table))
        else:
            ref = pp.reference_batch(params.table, cfg.n_reference, seed=rng)
        row.update(pp.estimate_fidelities(params, batch, ref, qcat_refs))
    return row


def _qcat_refs(model, cfg):
    refs = {}
    for q, I in cfg.qcat:
        refs[f"F_q{q}"] = pp.oat_snapshot_params(model.table, I, 2 * np.pi * I / q)
    return refs


def save_state(path, step, x, sampler: _Sampler, cfg: TvmcConfig, rows):
    """Write everything needed to replay the run from the start of ``step``."""
    data = {
        "version": 1,
        "step": step,
        "t": step * cfg.dt,
        "lattice": sampler.model.spec.label(),
        "x_re": np.real(x).tolist(),
        "x_im": np.imag(x).tolist(),
        "rng": sampler.rng.bit_generator.state,
        "walkers": None if sampler.walkers is None else sampler.walkers.tolist(),
        "config": cfg.to_dict(),
        "rows": rows,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(data, fh)
    os.replace(tmp, path)


def integrate(model: XXModel, cfg: TvmcConfig, params0: pp.PairProductParams | None = None,
              resume: str | None = None, callback=None) -> Trajectory:
    """Fixed-step RK4 integration of the TDVP flow from CSS_x.

    Each RK stage draws a fresh batch from the stage parameters. Observables
    are measured on the first-stage batch every ``measure_every`` steps.
    """
    table = model.table
    rng = np.random.default_rng(cfg.seed)
    sampler = _Sampler(model, cfg, rng)
    params = params0 if params0 is not None else pp.zero_params(table)
    x = params.vector()
    n_steps = int(round(cfg.t_max / cfg.dt))
    traj = Trajectory(meta={"config": cfg.to_dict(), "n_params": params.n_params,
                            "lattice": model.spec.label(), "N": model.N,
                            "norm": model.norm_value, "coupling": model.coupling})
    step0 = 0
    if resume is not None:
        with open(resume) as fh:
            data = json.load(fh)
        x = np.asarray(data["x_re"]) + 1j * np.asarray(data["x_im"])
        if data.get("lattice") != model.spec.label() or x.size != params.n_params:
            raise ValueError(f"checkpoint is for lattice {data.get('lattice')}, "
                             f"not {model.spec.label()}")
        rng.bit_generator.state = data["rng"]
        if data["walkers"] is not None:
            sampler.walkers = np.asarray(data["walkers"], dtype=float)
        step0 = data["step"]
        traj.rows = list(data["rows"])
        traj.times = [r["t"] for r in traj.rows]
        traj.params = [None] * len(traj.rows)
    qrefs = _qcat_refs(model, cfg)
    dt = cfg.dt
    started = time.time()

    def rhs(xv, t):
        p = pp.PairProductParams.from_vector(table, xv)
        batch = sampler(p)
        st = tdvp_rhs(p, batch, model, cfg.epsilon, cfg.epsilon0, cfg.solver, cfg.pinv_cutoff, t)
        if not np.all(np.isfinite(st.xdot)) or st.residual > cfg.residual_limit:
            raise TvmcError(f"TDVP solve failed at t={t:.4f}: residual {st.residual:.3g}, "
                            f"condition {st.condition:.3g}", traj)
        return st, p, batch

    for step in range(step0, n_steps + 1):
        t = step * dt
        if (cfg.checkpoint_every and cfg.checkpoint_dir and step % cfg.checkpoint_every == 0
                and step != step0):
            os.makedirs(cfg.checkpoint_dir, exist_ok=True)
            save_state(os.path.join(cfg.checkpoint_dir, "tvmc_state.json"), step, x, sampler, cfg,
                       traj.rows)
        st1, p, batch = rhs(x, t)
        if step % cfg.measure_every == 0 or step == n_steps:
            row = {"t": t, "t_kac": float(model.kac_time(t))}
            row.update(measure(p, batch, model, cfg, rng, qrefs))
            row["residual"] = st1.residual
            row["condition"] = st1.condition
            traj.times.append(t)
            traj.params.append(p)
            traj.rows.append(row)
            if callback is not None:
                callback(row)
            if not np.isfinite(row.get("Jx_err", 0.0)):
                raise TvmcError(f"error bars diverged at t={t:.4f}", traj)
        if step == n_steps:
            break
        k1 = st1.xdot
        k2 = rhs(x + 0.5 * dt * k1, t + 0.5 * dt)[0].xdot
        k3 = rhs(x + 0.5 * dt * k2, t + 0.5 * dt)[0].xdot
        k4 = rhs(x + dt * k3, t + dt)[0].xdot
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    traj.meta["wall_time"] = time.time() - started
    traj.meta["final_params"] = pp.PairProductParams.from_vector(table, x).to_dict()
    return traj

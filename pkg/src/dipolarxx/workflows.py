"""Composite computations shared by the CLI and the acceptance suite."""
from __future__ import annotations

import numpy as np

from . import analysis, dicke, exact, tvmc
from .lattice import LatticeSpec
from .model import XXModel

TOWER_REFERENCE = {"square": 2.4168, "triangular": 1.9587}


def tower(spec: LatticeSpec, k: int = 4, window=None, coupling: float = 1.0):
    """Sector spectra and tower-of-states inertia fit for one lattice."""
    model = XXModel(spec, coupling)
    blocks = exact.build_blocks(model)
    rec = exact.sector_spectrum(blocks, k=k)
    energies = {M: rec.tos_energy(M) for M in rec.energies if M >= 0}
    fit = analysis.fit_tower_inertia(energies, window)
    fit["J_times_I"] = fit["I_eff"] * coupling
    return rec, fit


def exact_series(spec: LatticeSpec, times, pjx_times=(), coupling: float = 1.0, tol: float = 1e-8,
                 size_cap: int = exact.SIZE_CAP):
    model = XXModel(spec, coupling)
    rows, pjx, _ = exact.evolve(model, times, pjx_times=pjx_times, tol=tol, size_cap=size_cap)
    return rows, pjx


def ghz_peak(times, f_ghz):
    """Refined maximum of the GHZ fidelity over a window, which must be interior.

    CSS_x itself has F_GHZ = 1/2, so only the largest value is meaningful;
    small bumps on the way are skipped.
    """
    t = np.asarray(times, dtype=float)
    f = np.asarray(f_ghz, dtype=float)
    k = int(np.argmax(f))
    if k == 0 or k == f.size - 1 or f[k] <= 0.5:
        raise analysis.AnalysisError("no interior GHZ fidelity peak above 1/2")
    out = analysis._refined_extremum(t[k - 1:k + 2], f[k - 1:k + 2], sign=-1)
    return float(out[0]), float(out[1])


def cat_census(spec: LatticeSpec, qs=(2, 4, 6), dt: float = 0.1, coupling: float = 1.0):
    """P(J^x) at the q-cat times t_q = 2 t_GHZ / q of the exact dynamics.

    t_GHZ is the refined maximum of the GHZ fidelity (see ``ghz_peak``). Returns the
    P(J^x) tables at every grid time and at each t_q, the census per q
    and the exponential tail fit at t_2.
    """
    model = XXModel(spec, coupling)
    blocks = exact.build_blocks(model)
    # scan until the GHZ fidelity has peaked above 1/2 (at most t = 60)
    grid = np.arange(0.0, 60.0 + dt / 2, dt)
    fg = []
    state = exact.css_x_full(model.N, [b.basis for b in blocks])
    grid_pjx = []
    t_prev = 0.0
    for t in grid:
        if t > t_prev:
            state = exact.propagate(state, blocks, t - t_prev)
            t_prev = t
        fg.append(exact.full_observables(state)["F_GHZ"])
        grid_pjx.append(exact.p_jx_full(state))
        if len(fg) > 3 and fg[-2] > fg[-1] and fg[-2] > 0.5:
            break
    t_ghz, f_ghz = ghz_peak(grid[:len(fg)], fg)
    t_q = {q: 2.0 * t_ghz / q for q in qs}
    rows, pjx, _ = exact.evolve(model, sorted(t_q.values()), blocks=blocks, pjx_times=sorted(t_q.values()))
    by_q = {q: pjx[t] for q, t in t_q.items()}
    census = {q: analysis.cat_peak_census(by_q[q], q) for q in qs}
    tail = analysis.exponential_tail_fit(by_q[2]) if 2 in by_q else None
    return {"t_ghz": t_ghz, "F_ghz": f_ghz, "t_q": t_q, "pjx": by_q, "census": census, "tail": tail,
            "grid_times": grid[:len(fg)], "grid_pjx": grid_pjx}


def odd_weight(p_jx) -> float:
    """Largest P(J^x) on values of the wrong parity (N/2 - m odd)."""
    p = np.asarray(p_jx)
    return float(p[~analysis._allowed(p.size - 1)].max(initial=0.0))


def tvmc_run(spec: LatticeSpec, cfg: tvmc.TvmcConfig, coupling: float = 1.0, norm=None, callback=None):
    model = XXModel(spec, coupling, norm)
    return model, tvmc.integrate(model, cfg, callback=callback)


def oat_scaling(sizes, n_grid: int = 400):
    """Optimal squeezing of the bare OAT model over sizes (Dicke oracle).

    Times are converted to the Kac-normalized scale t * K / N with K = N - 1.
    """
    t_opt, xi_opt = [], []
    for N in sizes:
        spec = dicke.OatSpec.bare(N)
        # the optimum sits near t ~ N^(1/3); scan up to a safe multiple
        hi = 6.0 * N ** (1.0 / 3.0)
        times = np.linspace(0.0, hi, n_grid)
        xi = np.array([dicke.dicke_observables(dicke.oat_evolve(dicke.css_x_dicke(N), spec, t)).xi2
                       for t in times])
        opt = analysis.optimal_squeezing(times, xi)
        # refine on a fine grid around the coarse optimum
        dt = times[1] - times[0]
        fine = np.linspace(max(opt["t_opt"] - 2 * dt, 0), opt["t_opt"] + 2 * dt, 81)
        xi = np.array([dicke.dicke_observables(dicke.oat_evolve(dicke.css_x_dicke(N), spec, t)).xi2
                       for t in fine])
        opt = analysis.optimal_squeezing(fine, xi)
        t_opt.append(opt["t_opt"] * (N - 1) / N)
        xi_opt.append(opt["xi2_opt"])
    nu, mu = analysis.squeezing_scaling(sizes, xi_opt, t_opt)
    return nu, mu, np.array(t_opt), np.array(xi_opt)

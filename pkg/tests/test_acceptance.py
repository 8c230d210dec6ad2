"""End-to-end acceptance criteria 1-10 at their stated tolerances.

Each test records one PASS/FAIL line (shown in the terminal summary) and
then asserts the criterion, so an unmet criterion fails visibly instead of
being loosened. The tVMC trajectories at N = 16, 36, 64 are shared by
criteria 7, 8 and 10.
"""
import numpy as np
import pytest

from dipolarxx import analysis, dicke, exact
from dipolarxx import pairproduct as pp
from dipolarxx import tvmc, workflows
from dipolarxx.lattice import LatticeSpec
from dipolarxx.model import XXModel

pytestmark = pytest.mark.acceptance

SQUARE16 = LatticeSpec("square", 4, 3.0)
TOWER_TOL = 0.005
ENERGY_DRIFT_PER_SITE = 1e-3


@pytest.fixture(scope="module")
def towers():
    return {geom: workflows.tower(LatticeSpec(geom, 4, 3.0))[1] for geom in ("square", "triangular")}


@pytest.fixture(scope="module")
def inertia16(towers):
    return towers["square"]["I_eff"]


@pytest.fixture(scope="module")
def exact16():
    """Exact N = 16 square alpha = 3 dynamics on t = 0 .. 60, dt = 0.1."""
    model = XXModel(SQUARE16)
    times = np.round(np.arange(0, 600.5) * 0.1, 10)
    rows, _, _ = exact.evolve(model, times)
    return model, rows


# ------------------------------------------------------------------ 1


def test_criterion_01_tower_of_states(towers, record_criterion):
    got = {g: f["J_times_I"] for g, f in towers.items()}
    ref = workflows.TOWER_REFERENCE
    ok = all(abs(got[g] / ref[g] - 1) <= TOWER_TOL for g in ref)
    record_criterion(1, ok, "J*I_eff square %.5f (ref 2.4168), triangular %.5f (ref 1.9587), tol 0.5%%"
                     % (got["square"], got["triangular"]))
    assert ok


# ------------------------------------------------------------------ 2


def test_criterion_02_tvmc_is_exact_for_oat(record_criterion):
    model = XXModel(LatticeSpec("square", 4, 0.0))
    N = model.N
    I = N / model.coupling
    t_rev = 4 * np.pi * I
    n_steps = 800
    # at alpha = 0 the flow is linear in time, so a coarse step is exact; the
    # pseudo-inverse solve avoids the O(epsilon) rate bias of the shift
    cfg = tvmc.TvmcConfig(dt=t_rev / n_steps, t_max=t_rev, measure_every=8, solver="pinv", seed=2)
    traj = tvmc.integrate(model, cfg)
    ref = dicke.oat_series(N, I, traj.times)
    floor = 1e-9 * N / 2  # round-off for phase-only states where the error bar vanishes
    worst = {"Jx": 0.0, "VarJx": 0.0, "xi2": 0.0}
    fails = []
    n_xi = 0
    for row, d in zip(traj.rows, ref):
        # xi2 divides by <Jx>^2; it only has a meaningful error bar where the
        # sampled mean spin is resolved from zero
        xi_defined = np.isfinite(d["xi2"]) and abs(row["Jx"]) > 3 * row["Jx_err"]
        n_xi += xi_defined
        for key in worst:
            if key == "xi2" and not xi_defined:
                continue
            dev = abs(row[key] - d[key])
            bound = 3 * row[f"{key}_err"] + floor
            worst[key] = max(worst[key], dev / bound)
            if dev > bound:
                fails.append((key, row["t"]))
    max_err = max(r["Jx_err"] for r in traj.rows)
    ok = not fails and max_err <= 0.02 * N / 2
    record_criterion(2, ok, "%d outputs to t = 4 pi I (xi2 at %d with resolved <Jx>); worst |dev|/3sigma "
                     "Jx %.2f VarJx %.2f xi2 %.2f; max Jx error bar %.3f (limit %.2f); misses %s"
                     % (len(traj.rows), n_xi, worst["Jx"], worst["VarJx"], worst["xi2"], max_err,
                        0.02 * N / 2, fails[:5]))
    assert ok


# ------------------------------------------------------------------ 3


def test_criterion_03_benchmark_against_exact(inertia16, record_criterion):
    model = XXModel(SQUARE16)
    t_rev = 4 * np.pi * inertia16
    out_dt = 0.5
    t_end = np.floor(t_rev / out_dt) * out_dt
    cfg = tvmc.TvmcConfig(dt=0.05, t_max=t_end, measure_every=10, sampler="exact", seed=3)
    traj = tvmc.integrate(model, cfg)
    rows, _, _ = exact.evolve(model, traj.times)
    var_bad, c_bad = [], []
    worst_var, worst_c = 0.0, 0.0
    for v, e in zip(traj.rows, rows):
        t = v["t"]
        if e["VarJx"] > 1e-9:
            rel = abs(v["VarJx"] / e["VarJx"] - 1)
        else:
            rel = 0.0 if abs(v["VarJx"]) < 1e-9 else np.inf
        worst_var = max(worst_var, rel)
        if rel > 0.05:
            var_bad.append((t, round(rel, 3)))
        dc = abs(v["C"] - e["C"])
        worst_c = max(worst_c, dc)
        # small deviations are tolerated over the last tenth of the window
        if dc > (0.1 if t >= 0.9 * t_rev else 0.05):
            c_bad.append((t, round(dc, 3)))
    ok = not var_bad and not c_bad
    record_criterion(3, ok, "4x4 to t_rev = %.2f: worst Var rel %.3f (tol 0.05), worst |dC| %.3f; "
                     "Var misses %s; C misses %s" % (t_rev, worst_var, worst_c, var_bad, c_bad))
    assert ok


# ------------------------------------------------------------------ 4


def test_criterion_04_cat_metrology(exact16, record_criterion):
    model, rows = exact16
    N = model.N
    times = np.array([r["t"] for r in rows])
    window = times <= 20
    t_ghz, _ = workflows.ghz_peak(times[window], [r["F_GHZ"] for r in rows[:window.sum()]])
    row = exact.evolve(model, [t_ghz])[0][0]
    var_p = 1 - row["parity"] ** 2
    ratio = row["dparity_dtheta"] ** 2 / (var_p * 4 * row["VarJx"])
    frac = 4 * row["VarJx"] / N**2
    ok = frac >= 0.9 and ratio >= 0.95
    record_criterion(4, ok, "t_GHZ = %.3f: 4 Var(Jx)/N^2 = %.4f (>= 0.9), Cramer-Rao ratio = %.4f (>= 0.95), "
                     "F_GHZ = %.3f" % (t_ghz, frac, ratio, row["F_GHZ"]))
    assert ok


# ------------------------------------------------------------------ 5


def test_criterion_05_qcat_census(record_criterion):
    res = workflows.cat_census(LatticeSpec("square", 5, 3.0, Ly=4))
    odd = max(workflows.odd_weight(p) for p in res["grid_pjx"] + list(res["pjx"].values()))
    counts = {q: c["count"] for q, c in res["census"].items()}
    expected = {2: 2, 4: 3, 6: 4}
    tail = res["tail"]
    ok = odd <= 1e-12 and counts == expected and tail["r2"] > 0.95 and tail["slope"] < 0
    record_criterion(5, ok, "5x4: max odd-J^x weight %.1e, peaks %s (want %s) at t_q %s, tail slope %.3f "
                     "R^2 %.3f" % (odd, counts, expected, {q: round(t, 3) for q, t in res["t_q"].items()},
                                   tail["slope"], tail["r2"]))
    assert ok


# ------------------------------------------------------------------ 6


def test_criterion_06_rotor_spectroscopy(exact16, inertia16, record_criterion):
    _, rows = exact16
    t = np.array([r["t"] for r in rows])
    spec = analysis.quench_spectrum(t, [r["Jx"] for r in rows], rotor_period=4 * np.pi * inertia16)
    top = sorted(p["omega"] * inertia16 for p in spec["peaks"][:3])
    tol = spec["bin_width"] * inertia16
    ok = len(top) == 3 and np.all(np.abs(np.array(top) - [0.5, 1.5, 2.5]) <= tol)
    record_criterion(6, ok, "three strongest lines at omega*I = %s, one bin = %.3f"
                     % ([round(x, 3) for x in top], tol))
    assert ok


# -------------------------------------------------------- shared tVMC runs

_TRAJ = {}


def tvmc_trajectory(L, inertia_ref):
    """Metropolis tVMC for an L x L square lattice, alpha = 3."""
    if L not in _TRAJ:
        spec = LatticeSpec("square", L, 3.0)
        model = XXModel(spec)
        I_pred = analysis.kac_rescale_inertia(inertia_ref, SQUARE16, spec)
        # past the first inversion; the largest size runs through the revival
        t_end = 1.1 * 4 * np.pi * I_pred if L == 8 else 1.5 * 2 * np.pi * I_pred
        t_end = np.ceil(t_end / 0.25) * 0.25
        cfg = tvmc.TvmcConfig(dt=0.05, t_max=t_end, measure_every=5, seed=100 + L)
        _TRAJ[L] = (model, I_pred, tvmc.integrate(model, cfg))
    return _TRAJ[L]


# ------------------------------------------------------------------ 7


def test_criterion_07_inertia_scaling(inertia16, record_criterion):
    parts, ok = [], True
    for L in (6, 8):
        model, I_pred, traj = tvmc_trajectory(L, inertia16)
        t = np.array(traj.times)
        got = analysis.extract_inertia(t, [r["Jx"] for r in traj.rows], [r["F_GHZ"] for r in traj.rows])
        dev = got["I_inv"] / I_pred - 1
        ok &= abs(dev) <= 0.05
        parts.append("N=%d I_inv %.3f vs Kac %.3f (%+.1f%%)" % (model.N, got["I_inv"], I_pred, 100 * dev))
    record_criterion(7, ok, "; ".join(parts))
    assert ok


# ------------------------------------------------------------------ 8

OAT_SIZES = [2**k for k in range(4, 13)]
SQUEEZE_T_MAX = 3.0


def test_criterion_08_squeezing_scaling(inertia16, record_criterion):
    sizes, xi_opt, t_opt = [], [], []
    for L in (4, 6, 8):
        model = XXModel(LatticeSpec("square", L, 3.0))
        # the squeezing optimum comes early; resolve it at every integrator step
        cfg = tvmc.TvmcConfig(dt=0.05, t_max=SQUEEZE_T_MAX, measure_every=1, fidelities=False, seed=200 + L)
        traj = tvmc.integrate(model, cfg)
        opt = analysis.optimal_squeezing(traj.times, [r["xi2"] for r in traj.rows])
        assert not opt["at_edge"]
        sizes.append(model.N)
        xi_opt.append(opt["xi2_opt"])
        t_opt.append(float(model.kac_time(opt["t_opt"])))
    nu, mu = analysis.squeezing_scaling(sizes, xi_opt, t_opt)
    dip_ok = 0.6 <= nu.exponent <= 0.85 and 0.25 <= mu.exponent <= 0.45
    onu, omu, _, _ = workflows.oat_scaling(OAT_SIZES)
    oat_ok = abs(onu.exponent - 2 / 3) <= 0.02 and abs(omu.exponent - 1 / 3) <= 0.02
    ok = dip_ok and oat_ok
    record_criterion(8, ok, "dipolar N=16,36,64: nu %.3f [0.6, 0.85], mu %.3f [0.25, 0.45] (%s); "
                     "OAT N=16..4096: nu %.4f (2/3 +- 0.02), mu %.4f (1/3 +- 0.02) (%s)"
                     % (nu.exponent, mu.exponent, "ok" if dip_ok else "out", onu.exponent, omu.exponent,
                        "ok" if oat_ok else "out"))
    assert ok


# ------------------------------------------------------------------ 9


def test_criterion_09_estimator_suite(record_criterion):
    model = XXModel(LatticeSpec("square", 5, 3.0, Ly=2))
    table, N = model.table, model.N
    blocks = exact.build_blocks(model)
    keys = ["Jx", "Jy", "Jz", "VarJx", "VarJy", "VarJz", "xi2", "parity", "dparity_dtheta", "E"]
    misses, checked, worst = [], 0, 0.0
    rng = np.random.default_rng(9)
    # random parameters can give near-classical states with deep wells, where
    # walkers need far more than the default burn-in to settle
    burn_in = 100 * N
    for trial in range(5):
        n = table.n_classes
        params = pp.PairProductParams(table, 0.3 * (rng.normal(size=n) + 1j * rng.normal(size=n)),
                                      0.03 * (rng.normal(size=n) + 1j * rng.normal(size=n)),
                                      0.03 * complex(rng.normal(), rng.normal()))
        other = pp.PairProductParams(table, params.f + 0.1 * rng.normal(size=n), params.g, params.h)
        v, w = pp.dense_vector(params), pp.dense_vector(other)
        want = exact.full_observables(v)
        state = exact.FullState.from_dense(v, [b.basis for b in blocks])
        want["E"] = exact.energy(state, blocks)
        batch = pp.metropolis_sample(params, n_walkers=10000, n_records=10, seed=rng, burn_in=burn_in)
        got = pp.estimate_observables(params, batch, model)
        ref = pp.reference_batch(table, 100000, seed=rng)
        got.update(pp.estimate_fidelities(params, batch, ref))
        b2 = pp.metropolis_sample(other, n_walkers=10000, n_records=10, seed=rng, burn_in=burn_in)
        got["overlap"], got["overlap_err"], _ = pp.estimate_overlap(params, batch, other, b2)
        want["overlap"] = exact.overlap_full(v, w)
        for key in keys + ["F_GHZ", "F_px", "F_mx", "C", "overlap"]:
            z = abs(got[key] - want[key]) / got[f"{key}_err"]
            worst = max(worst, z)
            checked += 1
            if z > 3:
                misses.append((trial, key, round(z, 2)))
    ok = not misses
    record_criterion(9, ok, "N=%d, 5 parameter sets, 1e5 samples: %d comparisons, worst %.2f sigma, "
                     "beyond 3 sigma %s" % (N, checked, worst, misses))
    assert ok


# ------------------------------------------------------------------ 10


def test_criterion_10_largest_size_invariants(inertia16, record_criterion, tmp_path):
    model, I_pred, traj = tvmc_trajectory(8, inertia16)
    rows = traj.rows
    t = np.array(traj.times)
    t_rev = 4 * np.pi * I_pred
    j2 = np.array([r["J2"] for r in rows])
    retention = float((j2 / j2[0])[t <= t_rev].min())
    E = np.array([r["E"] for r in rows])
    drift = float(np.max(np.abs(E - E[0]))) / model.N
    energy_ok = drift <= ENERGY_DRIFT_PER_SITE * model.coupling

    common = dict(dt=0.05, t_max=0.4, measure_every=2, seed=5)
    plain = tvmc.integrate(model, tvmc.TvmcConfig(**common)).rows
    again = tvmc.integrate(model, tvmc.TvmcConfig(checkpoint_every=4, checkpoint_dir=str(tmp_path),
                                                  **common)).rows
    resumed = tvmc.integrate(model, tvmc.TvmcConfig(**common),
                             resume=str(tmp_path / "tvmc_state.json")).rows
    determinism = plain == again == resumed

    ok = retention >= 0.9 and energy_ok and determinism
    E_err = np.median([r["E_err"] for r in rows]) / model.N
    record_criterion(10, ok, "N=64: min J^2 retention %.3f up to t_rev = %.1f (>= 0.9); max |E - E0|/N %.4f "
                     "to t = %.1f (<= %g, typical error bar per site %.4f); checkpoint replay identical %s"
                     % (retention, t_rev, drift, t[-1], ENERGY_DRIFT_PER_SITE, E_err, determinism))
    assert ok

"""Post-processing of observable series: squeezing optimum and scaling,
rotor inertia, quench spectroscopy, parity metrology and cat-state census."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeSpec, kac_factor

MIN_FIT_SIZE = 16
PEAK_THRESHOLD = 1e-3
ZERO_PAD = 4


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------- squeezing


def _parabola_vertex(x, y):
    """Vertex of the parabola through three points."""
    (x0, x1, x2), (y0, y1, y2) = x, y
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / denom
    c = (x1 * x2 * (x1 - x2) * y0 + x2 * x0 * (x2 - x0) * y1 + x0 * x1 * (x0 - x1) * y2) / denom
    if a <= 0:
        return None
    xv = -b / (2 * a)
    return xv, c - b**2 / (4 * a)


def _refined_extremum(times, values, sign=1):
    """Grid extremum (minimum for sign=1) with quadratic refinement.

    Returns ``(t, value, index, at_edge)``.
    """
    t = np.asarray(times, dtype=float)
    y = sign * np.asarray(values, dtype=float)
    if t.size == 0:
        raise AnalysisError("empty series")
    k = int(np.nanargmin(y))
    if k == 0 or k == t.size - 1:
        return t[k], sign * y[k], k, True
    v = _parabola_vertex(t[k - 1:k + 2], y[k - 1:k + 2])
    if v is None:
        return t[k], sign * y[k], k, False
    return v[0], sign * v[1], k, False


def optimal_squeezing(times, xi2) -> dict:
    """Optimum of xi_R^2(t); ``at_edge`` flags a minimum on the grid boundary."""
    t, val, k, edge = _refined_extremum(times, xi2)
    return {"t_opt": float(t), "xi2_opt": float(val), "index": k, "at_edge": bool(edge)}


@dataclass
class ScalingFit:
    """Least-squares fit of log y = log A + slope * log N."""

    sizes: np.ndarray
    values: np.ndarray
    exponent: float
    exponent_err: float
    prefactor: float
    residuals: np.ndarray
    sign: int = 1  # exponent = sign * slope
    meta: dict = field(default_factory=dict)

    def predict(self, N):
        return self.prefactor * np.asarray(N, dtype=float) ** (self.sign * self.exponent)


def power_law_fit(sizes, values, sign: int = 1, min_size: int = MIN_FIT_SIZE) -> ScalingFit:
    sizes = np.asarray(sizes, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = sizes >= min_size
    if keep.sum() < 3:
        raise AnalysisError(f"need at least 3 sizes >= {min_size}, got {int(keep.sum())}")
    if np.any(values[keep] <= 0):
        raise AnalysisError("power-law fit needs positive values")
    x, y = np.log(sizes[keep]), np.log(values[keep])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = len(x) - 2
    if dof > 0:
        s2 = resid @ resid / dof
        err = float(np.sqrt(s2 / np.sum((x - x.mean()) ** 2)))
    else:
        err = 0.0
    return ScalingFit(sizes[keep], values[keep], float(sign * coef[0]), err, float(np.exp(coef[1])),
                      resid, sign, {"min_size": min_size, "excluded": sizes[~keep].tolist()})


def squeezing_scaling(sizes, xi2_opt, t_opt_kac, min_size: int = MIN_FIT_SIZE):
    """Fits xi2_opt ~ N^-nu and Kac-normalized t_opt ~ N^mu; returns (nu, mu)."""
    nu = power_law_fit(sizes, xi2_opt, sign=-1, min_size=min_size)
    mu = power_law_fit(sizes, t_opt_kac, sign=1, min_size=min_size)
    return nu, mu


# ------------------------------------------------------------------ inertia


def fit_tower_inertia(tower: dict, window=None) -> dict:
    """Fit E(M) = c + M^2 / (2 I) to tower-of-states energies.

    ``tower`` maps M to energy. The default window is M = 0 .. N/2 - 1
    where N/2 is the largest M present (the fully polarized sector, a
    single state, is left out).
    """
    Ms = np.array(sorted(tower), dtype=float)
    if window is None:
        top = Ms.max()
        window = (0.0, top - 1)
    lo, hi = window
    sel = (Ms >= lo) & (Ms <= hi)
    if sel.sum() < 2:
        raise AnalysisError("fit window holds fewer than two sectors")
    M = Ms[sel]
    E = np.array([tower[m] for m in Ms[sel]])
    A = np.vstack([M**2, np.ones_like(M)]).T
    coef, *_ = np.linalg.lstsq(A, E, rcond=None)
    if coef[0] <= 0:
        raise AnalysisError("tower energies do not grow with M^2")
    resid = E - A @ coef
    return {"I_eff": float(1.0 / (2.0 * coef[0])), "offset": float(coef[1]),
            "window": (float(lo), float(hi)), "max_residual": float(np.abs(resid).max()),
            "M": M.tolist()}


def extract_inertia(times, jx, f_ghz=None) -> dict:
    """Effective moment of inertia from the collective-spin dynamics.

    Primary estimate: first inversion t_inv = argmin <J^x>, I = t_inv / (2 pi).
    Also reported when available: the revival after it (I = t_rev / (4 pi))
    and the GHZ fidelity peak (I = t_GHZ / pi).
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(jx, dtype=float)
    t_inv, y_inv, k, edge = _refined_extremum(t, y)
    if edge or y_inv >= 0:
        raise AnalysisError("no inversion of <J^x> inside the time window")
    out = {"t_inv": float(t_inv), "I_inv": float(t_inv / (2 * np.pi)), "jx_inv": float(y_inv)}
    estimates = [out["I_inv"]]
    if k + 2 < t.size:
        t_rev, y_rev, _, edge_r = _refined_extremum(t[k:], y[k:], sign=-1)
        # a genuine revival brings the spin back close to its initial length
        if not edge_r and y_rev > 0.5 * y[0]:
            out["t_rev"] = float(t_rev)
            out["I_rev"] = float(t_rev / (4 * np.pi))
            estimates.append(out["I_rev"])
    if f_ghz is not None:
        f = np.asarray(f_ghz, dtype=float)
        # GHZ peak before the inversion
        early = t <= t_inv
        t_g, _, _, edge_g = _refined_extremum(t[early], f[early], sign=-1)
        if not edge_g:
            out["t_ghz"] = float(t_g)
            out["I_ghz"] = float(t_g / np.pi)
            estimates.append(out["I_ghz"])
    out["I_eff"] = out["I_inv"]
    out["spread"] = float(np.ptp(estimates))
    return out


def kac_rescale_inertia(I_ref: float, spec_ref: LatticeSpec, spec_target: LatticeSpec) -> float:
    """Carry an effective inertia from one size to another via Kac factors."""
    if spec_ref.geometry != spec_target.geometry or spec_ref.alpha != spec_target.alpha:
        raise AnalysisError("reference and target must share geometry and alpha")
    k_ref, k_tgt = kac_factor(spec_ref), kac_factor(spec_target)
    k0_ref, k0_tgt = kac_factor(spec_ref, 0.0), kac_factor(spec_target, 0.0)
    return (k_ref / k_tgt) * (k0_tgt / k0_ref) * I_ref


# ------------------------------------------------------------ spectroscopy


def quench_spectrum(times, values, rotor_period: float | None = None, pad: int = ZERO_PAD,
                    floor: float = 0.05) -> dict:
    """Signed cosine transform of a series starting at t = 0.

    The signal is extended evenly to negative times and tapered with a Hann
    window centered at t = 0 (w = cos^2(pi t / 2T)), so a component
    a cos(w0 t) shows up as a peak of sign a at w0. The natural bin width
    of the even extension is pi / T; the grid is ``pad`` times finer.
    Peaks are local maxima of |X| at w > 0 above ``floor`` times the largest.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.size < 4:
        raise AnalysisError("series too short")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-6, atol=1e-12) or abs(t[0]) > 1e-12:
        raise AnalysisError("quench spectrum needs a uniform grid starting at t = 0")
    dt = dt[0]
    T = t[-1]
    w = np.cos(0.5 * np.pi * t / T) ** 2
    # trapezoid weights for the even extension: the t = 0 sample counts once
    q = np.full(t.size, 2.0)
    q[0] = 1.0
    bin_width = np.pi / T
    omega = np.arange(0, pad * t.size) * bin_width / pad
    omega = omega[omega <= np.pi / dt]
    X = (np.cos(np.outer(omega, t)) @ (q * w * x)) * dt / T
    amp = np.abs(X)
    inner = (amp[1:-1] > amp[:-2]) & (amp[1:-1] >= amp[2:])
    idx = np.nonzero(inner)[0] + 1
    idx = idx[amp[idx] > floor * amp[1:].max()]
    idx = idx[np.argsort(-amp[idx])]
    peaks = [{"omega": float(omega[i]), "amplitude": float(amp[i]), "weight": float(X[i])} for i in idx]
    low_res = rotor_period is not None and T < 2 * rotor_period
    return {"omega": omega, "transform": X, "peaks": peaks, "bin_width": bin_width,
            "taper": "hann-even", "pad": pad, "low_resolution": bool(low_res)}


# ---------------------------------------------------------------- metrology


def cramer_rao_report(rows) -> list[dict]:
    """Parity-based Fisher information against 4 Var(J^x).

    Var(P) is taken as 1 (P^2 = 1 with <P> = 0 at the points of interest).
    """
    out = []
    for r in rows:
        lhs = float(r["dparity_dtheta"]) ** 2
        rhs = 4.0 * float(r["VarJx"])
        out.append({"t": r.get("t", np.nan), "lhs": lhs, "rhs": rhs,
                    "ratio": lhs / rhs if rhs > 0 else np.nan})
    return out


# ----------------------------------------------------------------- q-cats


def _allowed(N):
    """Mask of J^x values m = -N/2..N/2 that share the parity of N/2."""
    m = np.arange(N + 1) - N / 2
    return np.isclose(np.mod(N / 2 - m, 2), 0)


def cat_peak_census(p_jx, q: int | None = None, threshold: float = PEAK_THRESHOLD) -> dict:
    """Count local maxima of P(J^x) over the populated J^x values.

    Only values m with N/2 - m even are populated by states of definite
    parity (for even N/2 these are the even m). With ``q`` given, the census
    refuses sizes below the resolvability bound N >= q^2 / (2 pi)^2 and
    reports the expected count q/2 + 1.
    """
    p = np.asarray(p_jx, dtype=float)
    N = p.size - 1
    if q is not None and N < q**2 / (2 * np.pi) ** 2:
        raise AnalysisError(f"q={q} cats are not resolvable at N={N}")
    m = np.arange(N + 1) - N / 2
    keep = _allowed(N)
    ms, ps = m[keep], p[keep]
    peaks = []
    for i in range(ps.size):
        left = ps[i - 1] if i > 0 else -np.inf
        right = ps[i + 1] if i + 1 < ps.size else -np.inf
        if ps[i] > threshold and ps[i] > left and ps[i] >= right:
            peaks.append(float(ms[i]))
    out = {"count": len(peaks), "locations": peaks, "threshold": threshold}
    if q is not None:
        out["expected"] = q // 2 + 1
    return out


def exponential_tail_fit(p_jx, floor: float = 1e-300) -> dict:
    """Fit ln P(J^x) against the distance to the nearest edge peak (m = +-N/2).

    Uses the populated values away from the two peaks; returns the slope
    (negative for a decaying tail), intercept and R^2.
    """
    p = np.asarray(p_jx, dtype=float)
    N = p.size - 1
    m = np.arange(N + 1) - N / 2
    d = N / 2 - np.abs(m)
    sel = _allowed(N) & (d > 0) & (p > floor)
    if sel.sum() < 3:
        raise AnalysisError("not enough populated points for a tail fit")
    x, y = d[sel], np.log(p[sel])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - resid @ resid / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(coef[0]), "intercept": float(coef[1]), "r2": float(r2), "n_points": int(sel.sum())}

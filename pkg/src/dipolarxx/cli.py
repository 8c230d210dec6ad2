"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
import warnings

import numpy as np

from . import __version__, analysis, dicke, exact, io, tvmc, workflows
from .config import ConfigError, RunConfig, load_config, validate_config
from .lattice import LatticeSpec
from .model import XXModel

log = logging.getLogger("dipolarxx")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
FIGURES = ("jx_dynamics", "squeezing", "pjx_cats", "varjx_parity", "coherence", "tower", "benchmark")
PRESETS = ("desk", "paper")
DESK_MAX_N = 64


# ------------------------------------------------------------------ helpers


def _config(args) -> RunConfig:
    raw = {}
    if args.config:
        cfg = load_config(args.config)
        raw = cfg.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["output"] = args.out
    return validate_config(raw)


def _model(cfg: RunConfig) -> XXModel:
    ham = cfg["hamiltonian"]
    return XXModel(cfg.lattice, ham["coupling"], ham["norm"])


def _times(cfg: RunConfig) -> np.ndarray:
    sch = cfg["schedule"]
    n = int(round(sch["t_max"] / sch["dt_outer"]))
    return np.arange(n + 1) * sch["dt_outer"]


def _out(cfg: RunConfig) -> str:
    if not cfg["output"]:
        raise ConfigError(["output: an output directory is required (--out)"])
    return io.make_run_dir(cfg["output"])


def _meta(cfg: RunConfig, command: str, **extra) -> dict:
    # the run directory itself is left out so identical runs give identical files
    config = {k: v for k, v in cfg.to_dict().items() if k != "output"}
    meta = {"command": command, "version": __version__, "config": config,
            "numpy": np.__version__, "python": platform.python_version()}
    meta.update(extra)
    return meta


def tvmc_config(cfg: RunConfig, checkpoint_dir=None) -> tvmc.TvmcConfig:
    sch, smp, td = cfg["schedule"], cfg["sampler"], cfg["tdvp"]
    n = cfg.lattice.N
    I_bare = None
    qcat = ()
    if cfg["targets"]["q"]:
        I_bare = cfg["dicke"]["inertia"] or n / cfg["hamiltonian"]["coupling"]
        qcat = tuple((q, I_bare) for q in cfg["targets"]["q"])
    return tvmc.TvmcConfig(
        dt=sch["dt"], t_max=sch["t_max"], measure_every=int(round(sch["dt_outer"] / sch["dt"])),
        sampler=smp["mode"], n_walkers=smp["walkers"], n_records=smp["samples_per_stage"],
        burn_in=smp["burn_in"], decorrelation=smp["decorrelation"],
        epsilon=td["epsilon"], epsilon0=td["epsilon0"], solver=td["solver"],
        pinv_cutoff=td["pinv_cutoff"], residual_limit=td["residual_limit"],
        n_reference=smp["reference_samples"], fidelities="fidelities" in cfg["observables"],
        qcat=qcat, seed=cfg["seed"], checkpoint_every=td["checkpoint_every"],
        checkpoint_dir=checkpoint_dir)


# --------------------------------------------------------------- commands


def cmd_exact_evolve(cfg: RunConfig, args) -> None:
    out = _out(cfg)
    model = _model(cfg)
    times = _times(cfg)
    pjx_times = cfg["targets"]["pjx_times"] if "pjx" in cfg["observables"] else []
    rows, pjx, state = exact.evolve(model, times, pjx_times=pjx_times,
                                    tol=cfg["schedule"]["krylov_tol"], size_cap=exact.HARD_CAP)
    io.write_rows(rows, os.path.join(out, "series.csv"))
    if pjx:
        io.write_pjx(pjx, os.path.join(out, "pjx.csv"))
    exact.save_checkpoint(os.path.join(out, "checkpoints", "final.dxxs"), state, float(times[-1]),
                          {"lattice": model.spec.label()})
    io.write_json(_meta(cfg, "exact-evolve", N=model.N, norm=model.norm_value, kac=model.kac),
                  os.path.join(out, "meta.json"))


def cmd_tvmc_evolve(cfg: RunConfig, args) -> None:
    out = _out(cfg)
    model = _model(cfg)
    tc = tvmc_config(cfg, os.path.join(out, "checkpoints"))
    traj = tvmc.integrate(model, tc, resume=args.resume)
    io.write_rows(traj.rows, os.path.join(out, "series.csv"))
    meta = _meta(cfg, "tvmc-evolve", N=model.N, norm=model.norm_value, kac=model.kac,
                 tvmc={**tc.to_dict(), "checkpoint_dir": "checkpoints"}, n_params=traj.meta["n_params"],
                 final_params=traj.meta["final_params"], resumed_from=args.resume)
    io.write_json(meta, os.path.join(out, "meta.json"))


def cmd_oat_ref(cfg: RunConfig, args) -> None:
    out = _out(cfg)
    N = cfg["dicke"]["N"] or cfg.lattice.N
    I = cfg["dicke"]["inertia"] or N / cfg["hamiltonian"]["coupling"]
    times = _times(cfg)
    rows = dicke.oat_series(N, I, times)
    io.write_rows(rows, os.path.join(out, "series.csv"))
    if "pjx" in cfg["observables"] and cfg["targets"]["pjx_times"]:
        spec = dicke.OatSpec(N, I)
        psi0 = dicke.css_x_dicke(N)
        pjx = {t: dicke.p_jx_dicke(dicke.oat_evolve(psi0, spec, t)) for t in cfg["targets"]["pjx_times"]}
        io.write_pjx(pjx, os.path.join(out, "pjx.csv"))
    io.write_json(_meta(cfg, "oat-ref", N=N, inertia=I), os.path.join(out, "meta.json"))


def cmd_spectrum(cfg: RunConfig, args) -> None:
    out = _out(cfg)
    sp = cfg["spectrum"]
    rec, fit = workflows.tower(cfg.lattice, k=sp["k"], window=sp["window"],
                               coupling=cfg["hamiltonian"]["coupling"])
    io.write_rows(rec.rows(), os.path.join(out, "spectrum.csv"))
    io.write_json(_meta(cfg, "spectrum", tower_fit=fit), os.path.join(out, "meta.json"))


def analyze_series(paths, out, pjx_paths=(), q_list=(2, 4, 6)) -> dict:
    """Run every applicable analysis on a set of series CSVs."""
    summary = {"inputs": list(paths)}
    squeeze, inertia, peaks, cr = [], [], [], []
    for path in paths:
        rows = io.read_rows(path)
        label = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
        t = io.column(rows, "t")
        meta_path = os.path.join(os.path.dirname(path), "meta.json")
        N = None
        if os.path.exists(meta_path):
            with open(meta_path) as fh:
                N = json.load(fh).get("N")
        if "xi2" in rows[0]:
            opt = analysis.optimal_squeezing(t, io.column(rows, "xi2"))
            t_kac = io.column(rows, "t_kac") if "t_kac" in rows[0] else t
            kac_opt = float(np.interp(opt["t_opt"], t, t_kac))
            squeeze.append({"series": label, "N": N, "t_opt_kac": kac_opt, **opt})
        try:
            inert = analysis.extract_inertia(t, io.column(rows, "Jx"),
                                             io.column(rows, "F_GHZ") if "F_GHZ" in rows[0] else None)
            inertia.append({"series": label, "N": N, **inert})
        except analysis.AnalysisError as exc:
            inertia.append({"series": label, "N": N, "error": str(exc)})
        try:
            sp = analysis.quench_spectrum(t, io.column(rows, "Jx"))
            for rank, p in enumerate(sp["peaks"]):
                peaks.append({"series": label, "rank": rank, "bin_width": sp["bin_width"], **p})
        except analysis.AnalysisError as exc:
            summary.setdefault("warnings", []).append(f"{label}: {exc}")
        if "dparity_dtheta" in rows[0]:
            for rec in analysis.cramer_rao_report(rows):
                cr.append({"series": label, **rec})
    io.write_rows(squeeze, os.path.join(out, "squeezing_scaling.csv"))
    io.write_rows(inertia, os.path.join(out, "inertia.csv"))
    io.write_rows(peaks, os.path.join(out, "spectrum_peaks.csv"))
    io.write_rows(cr, os.path.join(out, "cramer_rao.csv"))
    sized = [s for s in squeeze if s["N"]]
    if len({s["N"] for s in sized}) >= 3:
        try:
            nu, mu = analysis.squeezing_scaling([s["N"] for s in sized], [s["xi2_opt"] for s in sized],
                                                [s["t_opt_kac"] for s in sized])
            summary["nu"] = {"exponent": nu.exponent, "err": nu.exponent_err, **nu.meta}
            summary["mu"] = {"exponent": mu.exponent, "err": mu.exponent_err, **mu.meta}
        except analysis.AnalysisError as exc:
            summary["scaling_error"] = str(exc)
    census = []
    for path in pjx_paths:
        for t, p in io.read_pjx(path).items():
            for q in q_list:
                try:
                    c = analysis.cat_peak_census(p, q)
                except analysis.AnalysisError:
                    continue
                census.append({"source": path, "t": t, "q": q, "count": c["count"],
                               "locations": " ".join(str(x) for x in c["locations"])})
    io.write_rows(census, os.path.join(out, "cat_census.csv"))
    summary["squeezing"] = squeeze
    summary["inertia"] = inertia
    io.write_json(summary, os.path.join(out, "summary.json"))
    return summary


def cmd_analyze(cfg: RunConfig, args) -> None:
    if not args.series:
        raise ConfigError(["analyze: at least one --series CSV is required"])
    out = _out(cfg)
    analyze_series(args.series, out, args.pjx or ())


# ---------------------------------------------------------------- reproduce


def _preset_sizes(preset, desk, paper):
    if preset == "desk":
        return desk
    too_big = [n for n in paper if n > DESK_MAX_N]
    if too_big:
        warnings.warn(f"sizes {too_big} exceed desk capability; running the largest feasible sizes")
        log.warning("sizes %s exceed desk capability; running the largest feasible sizes", too_big)
    return [n for n in paper if n <= DESK_MAX_N] or desk


def _square(N, alpha=3.0):
    L = int(round(np.sqrt(N)))
    return LatticeSpec("square", L, alpha)


def _tvmc_cfg(seed, t_max, dt=0.05, out_every=0.5, **kw):
    return tvmc.TvmcConfig(dt=dt, t_max=t_max, measure_every=int(round(out_every / dt)), seed=seed, **kw)


def reproduce(figure: str, preset: str, out: str, seed: int = 0) -> dict:
    """Regenerate the data behind one figure; returns the manifest."""
    if figure not in FIGURES:
        raise ConfigError([f"figure: must be one of {list(FIGURES)}, got {figure!r}"])
    if preset not in PRESETS:
        raise ConfigError([f"preset: must be one of {list(PRESETS)}, got {preset!r}"])
    out = io.make_run_dir(out)
    started = time.time()
    manifest = {"figure": figure, "preset": preset, "seed": seed, "version": __version__,
                "numpy": np.__version__, "python": platform.python_version(), "runs": []}

    def record(name, **info):
        manifest["runs"].append({"name": name, **info})

    if figure == "tower":
        fits = {}
        for geom in ("square", "triangular"):
            spec = LatticeSpec(geom, 4, 3.0)
            rec, fit = workflows.tower(spec)
            io.write_rows(rec.rows(), os.path.join(out, f"spectrum_{geom}.csv"))
            fits[geom] = fit
            record(f"spectrum_{geom}", lattice=spec.label(), k=4)
        io.write_json(fits, os.path.join(out, "tower_fit.json"))
    elif figure in ("jx_dynamics", "varjx_parity"):
        spec = _square(16)
        t_max = 8 * np.pi * workflows.TOWER_REFERENCE["square"] if figure == "jx_dynamics" else 20.0
        times = np.arange(0, t_max, 0.1)
        rows, _ = workflows.exact_series(spec, times)
        io.write_rows(rows, os.path.join(out, "series_exact_N16.csv"))
        record("exact_N16", lattice=spec.label(), dt=0.1, t_max=float(times[-1]))
        if figure == "jx_dynamics":
            sp = analysis.quench_spectrum(times, io.column(rows, "Jx"))
            io.write_rows([{"omega": w, "transform": x} for w, x in zip(sp["omega"], sp["transform"])],
                          os.path.join(out, "spectrum_N16.csv"))
            io.write_rows(sp["peaks"], os.path.join(out, "spectrum_peaks_N16.csv"))
            for N in _preset_sizes(preset, [36], [36, 64, 100, 144]):
                spec = _square(N)
                I_pred = analysis.kac_rescale_inertia(workflows.TOWER_REFERENCE["square"], _square(16), spec)
                cfg = _tvmc_cfg(seed, t_max=round(2.4 * np.pi * I_pred, 1))
                _, traj = workflows.tvmc_run(spec, cfg)
                io.write_rows(traj.rows, os.path.join(out, f"series_tvmc_N{N}.csv"))
                record(f"tvmc_N{N}", lattice=spec.label(), tvmc=cfg.to_dict(), I_pred=I_pred)
        else:
            io.write_rows(analysis.cramer_rao_report(rows), os.path.join(out, "cramer_rao_N16.csv"))
    elif figure == "pjx_cats":
        spec = LatticeSpec("square", 5, 3.0, Ly=4)
        res = workflows.cat_census(spec)
        io.write_pjx({res["t_q"][q]: p for q, p in res["pjx"].items()}, os.path.join(out, "pjx_N20.csv"))
        io.write_rows([{"q": q, "t_q": res["t_q"][q], **{k: v for k, v in c.items() if k != "locations"},
                        "locations": " ".join(map(str, c["locations"]))} for q, c in res["census"].items()],
                      os.path.join(out, "cat_census.csv"))
        io.write_json({"t_ghz": res["t_ghz"], "F_ghz": res["F_ghz"], "tail": res["tail"]},
                      os.path.join(out, "cats.json"))
        record("exact_N20", lattice=spec.label())
    elif figure in ("squeezing", "coherence", "benchmark"):
        if figure == "benchmark":
            sizes = [16]
        else:
            sizes = _preset_sizes(preset, [16, 36, 64] if figure == "squeezing" else [16, 36],
                                  [16, 36, 64, 100, 144])
        sq = []
        for N in sizes:
            spec = _square(N)
            I_pred = analysis.kac_rescale_inertia(workflows.TOWER_REFERENCE["square"], _square(16), spec)
            t_max = {"squeezing": 1.2 * I_pred, "coherence": 1.3 * np.pi * I_pred,
                     "benchmark": 4 * np.pi * workflows.TOWER_REFERENCE["square"]}[figure]
            cfg = _tvmc_cfg(seed, t_max=round(t_max, 1), out_every=0.25 if figure == "squeezing" else 0.5)
            model, traj = workflows.tvmc_run(spec, cfg)
            io.write_rows(traj.rows, os.path.join(out, f"series_tvmc_N{N}.csv"))
            record(f"tvmc_N{N}", lattice=spec.label(), tvmc=cfg.to_dict())
            if figure == "squeezing":
                opt = analysis.optimal_squeezing(io.column(traj.rows, "t"), io.column(traj.rows, "xi2"))
                opt["t_opt_kac"] = float(model.kac_time(opt["t_opt"]))
                sq.append({"N": N, **opt})
            if figure == "benchmark" or (figure == "coherence" and N <= exact.SIZE_CAP):
                rows, _ = workflows.exact_series(spec, io.column(traj.rows, "t"))
                io.write_rows(rows, os.path.join(out, f"series_exact_N{N}.csv"))
                record(f"exact_N{N}", lattice=spec.label())
        if figure == "squeezing":
            io.write_rows(sq, os.path.join(out, "squeezing_optimum.csv"))
            summary = {}
            if len(sq) >= 3:
                nu, mu = analysis.squeezing_scaling([s["N"] for s in sq], [s["xi2_opt"] for s in sq],
                                                    [s["t_opt_kac"] for s in sq])
                summary = {"nu": nu.exponent, "nu_err": nu.exponent_err,
                           "mu": mu.exponent, "mu_err": mu.exponent_err}
            oat_sizes = [2**k for k in range(4, 13)]
            nu_o, mu_o, t_o, x_o = workflows.oat_scaling(oat_sizes)
            io.write_rows([{"N": n, "t_opt_kac": t, "xi2_opt": x} for n, t, x in zip(oat_sizes, t_o, x_o)],
                          os.path.join(out, "squeezing_oat.csv"))
            summary.update({"oat_nu": nu_o.exponent, "oat_mu": mu_o.exponent})
            io.write_json(summary, os.path.join(out, "scaling_fit.json"))
    manifest["wall_time"] = time.time() - started
    io.write_json(manifest, os.path.join(out, "manifest.json"))
    return manifest


def cmd_reproduce(cfg: RunConfig, args) -> None:
    if not cfg["output"]:
        raise ConfigError(["output: an output directory is required (--out)"])
    reproduce(args.figure, args.preset, cfg["output"], cfg["seed"])


# -------------------------------------------------------------------- main


def _common(suppress: bool) -> argparse.ArgumentParser:
    # flags are accepted before or after the subcommand
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML run configuration", **d)
    p.add_argument("--seed", type=int, help="override the configured seed", **d)
    p.add_argument("--out", help="output directory (must not exist or be empty)", **d)
    p.add_argument("--threads", type=int, help="worker threads for compiled kernels", **d)
    p.add_argument("-v", "--verbose", action="store_true", **d)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dipolarxx", description=__doc__.splitlines()[0],
                                     parents=[_common(False)])
    common = _common(True)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("exact-evolve", parents=[common], help="exact sector-blocked dynamics")
    p = sub.add_parser("tvmc-evolve", parents=[common], help="pair-product tVMC dynamics")
    p.add_argument("--resume", help="checkpoint file to continue from")
    sub.add_parser("oat-ref", parents=[common], help="one-axis-twisting reference series")
    sub.add_parser("spectrum", parents=[common], help="sector spectra and tower fit")
    p = sub.add_parser("analyze", parents=[common], help="post-process series CSVs")
    p.add_argument("--series", nargs="+", help="series.csv files")
    p.add_argument("--pjx", nargs="*", help="pjx.csv files for the cat census")
    p = sub.add_parser("reproduce", parents=[common], help="regenerate one figure's data")
    p.add_argument("figure", choices=FIGURES)
    p.add_argument("--preset", choices=PRESETS, default="desk")
    return parser


COMMANDS = {
    "exact-evolve": cmd_exact_evolve,
    "tvmc-evolve": cmd_tvmc_evolve,
    "oat-ref": cmd_oat_ref,
    "spectrum": cmd_spectrum,
    "analyze": cmd_analyze,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads:
        import numba
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, io.RunDirExists) as exc:
        errors = getattr(exc, "errors", [str(exc)])
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (exact.KrylovError, tvmc.TvmcError, FloatingPointError, np.linalg.LinAlgError,
            analysis.AnalysisError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining ValueErrors come from size caps and invalid inputs
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration: YAML schema, defaults and validation."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import yaml

from .exact import HARD_CAP
from .lattice import GEOMETRIES, LatticeSpec

ENGINES = ("exact", "tvmc", "dicke")
SOLVERS = ("shift", "pinv")
SAMPLERS = ("metropolis", "exact")

# Every field and its default. The effective config (after merging) is
# written to meta.json of every run.
DEFAULTS = {
    "lattice": {
        "geometry": "square",  # square | triangular
        "L": 4,                # cells along the first primitive vector
        "Ly": None,            # cells along the second one (default: L)
        "alpha": 3.0,          # power-law exponent of the couplings
    },
    "engine": "exact",         # exact | tvmc | dicke
    "hamiltonian": {
        "coupling": 1.0,       # overall coupling, sets the time unit
        "norm": None,          # None: N at alpha=0 and 1 otherwise; a number; or "kac"
    },
    "schedule": {
        "t_max": 10.0,         # final time
        "dt_outer": 0.1,       # spacing of recorded times
        "dt": 0.05,            # tVMC integrator step (must divide dt_outer)
        "krylov_tol": 1e-8,    # exact-engine Krylov error per step
    },
    "sampler": {
        "mode": "metropolis",  # metropolis | exact (full enumeration, small N)
        "walkers": 1000,
        "samples_per_stage": 10,  # records per walker per RK stage
        "burn_in": None,       # sweeps; None: 10 N cold, 2 warm
        "decorrelation": None, # proposals between records; None: N
        "reference_samples": 10000,
    },
    "tdvp": {
        "epsilon": 1e-3,       # relative diagonal shift
        "epsilon0": 1e-6,      # absolute diagonal shift
        "solver": "shift",     # shift | pinv
        "pinv_cutoff": 1e-6,
        "residual_limit": 1e-2,
        "checkpoint_every": 0, # steps; 0 disables
    },
    "dicke": {
        "N": None,             # default: lattice size
        "inertia": None,       # default: N / coupling (bare OAT)
    },
    "spectrum": {
        "k": 4,                # eigenpairs per sector
        "window": None,        # [M_lo, M_hi] for the tower fit; None: 0 .. N/2-1
    },
    "observables": ["moments", "fidelities"],  # plus optional "pjx"
    "targets": {
        "q": [],               # q-cat overlaps to record
        "pjx_times": [],       # times at which P(J^x) is stored (exact, dicke)
    },
    "seed": 0,
    "output": None,
}

OBSERVABLES = ("moments", "fidelities", "pjx")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def lattice(self) -> LatticeSpec:
        lat = self.data["lattice"]
        return LatticeSpec(lat["geometry"], lat["L"], float(lat["alpha"]), lat["Ly"])

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def _merge(defaults, raw, path, errors):
    out = copy.deepcopy(defaults)
    if raw is None:
        return out
    if not isinstance(raw, dict):
        errors.append(f"{path or '<root>'}: expected a mapping")
        return out
    for key, val in raw.items():
        p = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            errors.append(f"{p}: unknown field")
        elif isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], val, p, errors)
        else:
            out[key] = val
    return out


def _number(d, key, path, errors, lo=None, integer=False, allow_none=False, strict=False):
    v = d[key]
    if v is None and allow_none:
        return
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok:
        errors.append(f"{path}.{key}: expected {'an integer' if integer else 'a number'}, got {v!r}")
        return
    if lo is not None and (v <= lo if strict else v < lo):
        errors.append(f"{path}.{key}: must be {'>' if strict else '>='} {lo}, got {v!r}")


def validate_config(raw) -> RunConfig:
    """Parse YAML text (or a mapping), fill defaults and check ranges.

    Raises ``ConfigError`` listing every violation with its field path.
    """
    errors = []
    if isinstance(raw, str):
        try:
            raw = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError([f"<root>: invalid YAML ({exc})"]) from None
    cfg = _merge(DEFAULTS, raw, "", errors)

    lat = cfg["lattice"]
    if lat["geometry"] not in GEOMETRIES:
        errors.append(f"lattice.geometry: must be one of {list(GEOMETRIES)}, got {lat['geometry']!r}")
    _number(lat, "L", "lattice", errors, lo=2, integer=True)
    _number(lat, "Ly", "lattice", errors, lo=2, integer=True, allow_none=True)
    _number(lat, "alpha", "lattice", errors, lo=0)
    if cfg["engine"] not in ENGINES:
        errors.append(f"engine: must be one of {list(ENGINES)}, got {cfg['engine']!r}")

    ham = cfg["hamiltonian"]
    _number(ham, "coupling", "hamiltonian", errors, lo=0, strict=True)
    if ham["norm"] not in (None, "kac"):
        _number(ham, "norm", "hamiltonian", errors, lo=0, strict=True)

    sch = cfg["schedule"]
    for key in ("t_max", "dt_outer", "dt", "krylov_tol"):
        _number(sch, key, "schedule", errors, lo=0, strict=key != "t_max")

    smp = cfg["sampler"]
    if smp["mode"] not in SAMPLERS:
        errors.append(f"sampler.mode: must be one of {list(SAMPLERS)}, got {smp['mode']!r}")
    for key in ("walkers", "samples_per_stage", "reference_samples"):
        _number(smp, key, "sampler", errors, lo=1, integer=True)
    for key in ("burn_in", "decorrelation"):
        _number(smp, key, "sampler", errors, lo=0, integer=True, allow_none=True)

    td = cfg["tdvp"]
    for key in ("epsilon", "epsilon0", "pinv_cutoff"):
        _number(td, key, "tdvp", errors, lo=0)
    _number(td, "residual_limit", "tdvp", errors, lo=0, strict=True)
    _number(td, "checkpoint_every", "tdvp", errors, lo=0, integer=True)
    if td["solver"] not in SOLVERS:
        errors.append(f"tdvp.solver: must be one of {list(SOLVERS)}, got {td['solver']!r}")

    _number(cfg["dicke"], "N", "dicke", errors, lo=1, integer=True, allow_none=True)
    _number(cfg["dicke"], "inertia", "dicke", errors, lo=0, strict=True, allow_none=True)
    _number(cfg["spectrum"], "k", "spectrum", errors, lo=1, integer=True)

    obs = cfg["observables"]
    if not isinstance(obs, list) or any(o not in OBSERVABLES for o in obs):
        errors.append(f"observables: expected a list drawn from {list(OBSERVABLES)}, got {obs!r}")
    tg = cfg["targets"]
    if not isinstance(tg["q"], list) or any(isinstance(q, bool) or not isinstance(q, int) or q < 1
                                             for q in tg["q"]):
        errors.append(f"targets.q: expected a list of positive integers, got {tg['q']!r}")
    if not isinstance(tg["pjx_times"], list):
        errors.append("targets.pjx_times: expected a list of times")
    _number(cfg, "seed", "", errors, lo=0, integer=True)

    if not errors:
        Ly = lat["Ly"] or lat["L"]
        N = lat["L"] * Ly
        if cfg["engine"] == "exact" and N > HARD_CAP:
            errors.append(f"lattice.L: exact engine is capped at N = {HARD_CAP}, got N = {N}")
        if cfg["engine"] == "tvmc":
            ratio = sch["dt_outer"] / sch["dt"]
            if abs(ratio - round(ratio)) > 1e-9:
                errors.append("schedule.dt: must divide schedule.dt_outer")
            if smp["mode"] == "exact" and N > 22:
                errors.append(f"sampler.mode: full enumeration is capped at N = 22, got N = {N}")
    if errors:
        raise ConfigError(errors)
    return RunConfig(cfg)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return validate_config(fh.read())

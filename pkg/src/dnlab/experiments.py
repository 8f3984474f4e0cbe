"""Config schema and the experiment drivers shared by the CLI, the demos and the tests.

A config is one JSON document with a section per experiment. Missing keys
take the defaults below; unknown keys are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import branch_lab as bl
from . import law_stability as ls
from . import ou_kolmogorov as ok
from .nonlinear_ops import DNLConfig, validate_config
from .spde_sim import NoiseSpec, SimConfig, energy_diagnostic, simulate_ensemble
from .spectral_core import SpectralBasis

__all__ = [
    "DEFAULT_CONFIG",
    "ConfigError",
    "load_config",
    "merge_config",
    "config_hash",
    "model_for",
    "run_validate",
    "run_branch",
    "run_simulate",
    "run_stability",
    "run_contrast",
    "run_feller",
    "run_kolmogorov",
]

DEFAULT_CONFIG = {
    "seed": 20240601,
    "model": {"p": 3.0, "M": 2.0, "ell_gain": 11.0, "delta": 0.15, "rho": 4.0, "f_gain": 0.0},
    "branch": {"rho": 2.0, "d": 64, "T": 2.0, "t_star": [0.0, 1.0], "n_times": 201, "tol": 1e-8},
    "simulate": {"d": 16, "T": 1.0, "dt": 0.0078125, "yosida_lam": 0.01, "n": None, "noise_scale": 1.0,
                 "ensemble_size": 1000, "save_every": 1, "block_size": 256},
    "stability": {"d": 16, "T": 8.0, "dt": 0.0078125, "ensemble_size": 2000, "save_every": 4,
                  "ladder": [[0.1, 4], [0.05, 8], [0.02, 16], [0.01, 32]], "alpha": 2.0, "scale": 0.1,
                  "n_boot": 400, "block_size": 256},
    "contrast": {"rho": 2.0, "d": 16, "T": 2.0, "dt": 0.0009765625, "yosida_lam": 0.01, "eps": 1e-3,
                 "noisy_size": 2000, "scale": 0.5, "alpha": 2.0, "n_boot": 400, "save_every": 8},
    "feller": {"d": 16, "n_times": 13, "mc_size": 10000, "tolerance": 0.15},
    "kolmogorov": {"d_K": 1, "alpha_factor": 2.0, "yosida_lam": 0.05, "mc_size": 10000,
                   "points_per_axis": 21, "observables": ["bump_0", "tanh_1", "energy_sat"],
                   "identity_size": 5000, "identity_steps": 400, "u0_scale": 0.5},
}


class ConfigError(ValueError):
    """The config document is malformed."""


def merge_config(user: dict | None) -> dict:
    """Defaults overlaid with ``user``; unknown sections or keys raise :class:`ConfigError`."""
    out = copy.deepcopy(DEFAULT_CONFIG)
    for key, val in (user or {}).items():
        if key not in out:
            raise ConfigError(f"unknown config section {key!r}")
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"section {key!r} must be an object")
            bad = set(val) - set(out[key])
            if bad:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
            out[key].update(val)
        else:
            out[key] = val
    return out


def load_config(path=None) -> dict:
    if path is None:
        return merge_config(None)
    with open(path) as fh:
        try:
            user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return merge_config(user)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def model_for(cfg: dict, section: str | None = None) -> DNLConfig:
    """Model constants, with ``rho`` overridden by the section when it sets one."""
    data = dict(cfg["model"])
    if section and "rho" in cfg[section]:
        data["rho"] = cfg[section]["rho"]
    return DNLConfig.from_dict(data)


def run_validate(cfg: dict, section: str | None = None):
    return validate_config(model_for(cfg, section))


# branch --------------------------------------------------------------------------------


@dataclass
class BranchRun:
    rows: list  # dicts per t_star
    separations: list  # (t_a, t_b, closed form, trapezoid)
    I_value: float
    grad_norm: float
    iterations: int
    zero_I: float

    @property
    def passed(self) -> bool:
        ok1 = all(r["ode_residual"] < 1e-12 and r["pde_residual"] < 1e-5 for r in self.rows)
        ok2 = all(abs(num - ref) <= 0.01 * ref for _, _, ref, num in self.separations)
        return ok1 and ok2 and self.I_value < 0 and self.grad_norm < 1e-8


def run_branch(cfg: dict) -> BranchRun:
    sec = cfg["branch"]
    model = model_for(cfg, "branch")
    basis = SpectralBasis(int(sec["d"]), model.rho)
    v, rep = bl.minimize_I(model, basis, tol=sec["tol"])
    T = float(sec["T"])
    # the truncation level must cover the branch and its rate so the closed form stays in the inner range
    M2 = float(np.max(np.abs(bl.synthesize(v, basis))))
    level = max(model.M, bl.theta_bound(T, model.p) * M2, float(bl.theta_star_dot(T, 0.0, model.p)) * M2)
    branch_model = model.replace(M=level)
    times = np.linspace(0.0, T, int(sec["n_times"]))
    rows, sols = [], []
    for ts in sec["t_star"]:
        b = bl.assemble_branch(float(ts), 1, v, branch_model, basis, T)
        sols.append(b)
        rows.append({"t_star": float(ts), "sign": 1, "I_value": rep.I_value,
                     "ode_residual": bl.ode_residual(times, float(ts), model.p),
                     "elliptic_residual": bl.elliptic_residual(v, model, basis),
                     "pde_residual": bl.pde_residual(b, times), "M1": b.M1, "M2": b.M2, "M": level,
                     "pairwise_distance": bl.branch_separation(sols[0].t_star, float(ts), T, model.p,
                                                               float(np.linalg.norm(v)))})
    seps = []
    vn = float(np.linalg.norm(v))
    for i in range(len(sols)):
        for j in range(i + 1, len(sols)):
            ta, tb = sols[i].t_star, sols[j].t_star
            ref = bl.branch_separation(ta, tb, T, model.p, vn)
            fine = np.linspace(0.0, T, 20001)
            num = bl.trajectory_distance(sols[i].coefficients(fine), sols[j].coefficients(fine), fine)
            seps.append((ta, tb, ref, num))
    # Poincare regime: ell_gain below lambda_1 leaves only the trivial minimizer
    low = model.replace(ell_gain=min(5.0, 0.5 * math.pi**model.rho))
    v0, _ = bl.minimize_I(low, basis)
    zero_I = bl.energy_I(v0, low, basis)
    return BranchRun(rows, seps, rep.I_value, rep.grad_norm, rep.iterations, zero_I)


# simulate ------------------------------------------------------------------------------


def simulate_config(cfg: dict, seed: int) -> SimConfig:
    sec = cfg["simulate"]
    model = model_for(cfg, "simulate")
    basis = SpectralBasis(int(sec["d"]), model.rho)
    n = math.inf if sec["n"] is None else float(sec["n"])
    noise = NoiseSpec(model.delta, n, float(sec["noise_scale"]))
    return SimConfig(model, basis, T=float(sec["T"]), dt=float(sec["dt"]), yosida_lam=float(sec["yosida_lam"]),
                     noise=noise, seed=seed, ensemble_size=int(sec["ensemble_size"]),
                     save_every=int(sec["save_every"]), block_size=int(sec["block_size"]))


def run_simulate(cfg: dict, seed: int, workers=None):
    sim = simulate_config(cfg, seed)
    ens = simulate_ensemble(sim, workers=workers)
    return ens, energy_diagnostic(ens)


# stability -----------------------------------------------------------------------------


def stability_base(cfg: dict, seed: int) -> SimConfig:
    sec = cfg["stability"]
    model = model_for(cfg, "stability")
    basis = SpectralBasis(int(sec["d"]), model.rho)
    lam0 = float(sec["ladder"][0][0])
    return SimConfig(model, basis, T=float(sec["T"]), dt=float(sec["dt"]), yosida_lam=lam0,
                     noise=NoiseSpec(model.delta), seed=seed, ensemble_size=int(sec["ensemble_size"]),
                     save_every=int(sec["save_every"]), block_size=int(sec["block_size"]))


def run_stability(cfg: dict, seed: int, workers=None):
    sec = cfg["stability"]
    base = stability_base(cfg, seed)
    fs = ls.FunctionalSet.default(float(sec["scale"]), float(sec["alpha"]))
    ladder = [(float(lam), float(n)) for lam, n in sec["ladder"]]
    return ls.stability_experiment(base, ladder, fs, workers=workers, n_boot=int(sec["n_boot"]), seed=seed)


# contrast ------------------------------------------------------------------------------


def run_contrast(cfg: dict, seed: int, workers=None):
    sec = cfg["contrast"]
    model = model_for(cfg, "contrast")
    basis = SpectralBasis(int(sec["d"]), model.rho)
    v, _ = bl.minimize_I(model, basis)
    base = SimConfig(model, basis, T=float(sec["T"]), dt=float(sec["dt"]), yosida_lam=float(sec["yosida_lam"]),
                     noise=NoiseSpec(model.delta), seed=seed, save_every=int(sec["save_every"]))
    fs = ls.FunctionalSet.default(float(sec["scale"]), float(sec["alpha"]))
    return ls.deterministic_contrast(base, v, float(sec["eps"]), noisy_size=int(sec["noisy_size"]),
                                     functionals=fs, workers=workers, n_boot=int(sec["n_boot"]), seed=seed)


# feller / kolmogorov -------------------------------------------------------------------


def feller_params(cfg: dict, d: int | None = None, alpha: float = 1.0) -> ok.OUParams:
    model = model_for(cfg, "feller")
    basis = SpectralBasis(int(d or cfg["feller"]["d"]), model.rho)
    return ok.OUParams.from_noise(basis, NoiseSpec(model.delta), alpha, model.k_A)


def run_feller(cfg: dict, seed: int):
    sec = cfg["feller"]
    model = model_for(cfg, "feller")
    params = feller_params(cfg)
    probe = ok.feller_exponent_probe(params, model.delta, n_times=int(sec["n_times"]),
                                     mc_size=int(sec["mc_size"]), seed=seed)
    return probe, ok.contraction_constants(model, probe.C_R_emp)


@dataclass
class KolmogorovRun:
    probe: ok.FellerProbe
    constants: ok.ContractionConstants
    alpha: float
    solutions: dict
    identity: dict
    u0: np.ndarray


def kolmogorov_observables(cfg: dict, params: ok.OUParams) -> list:
    scale = math.sqrt(float(np.max(params.Q_inf)))
    cat = {g.name: g for g in ls.observable_catalog(scale)}
    names = cfg["kolmogorov"]["observables"]
    missing = [n for n in names if n not in cat]
    if missing:
        raise ConfigError(f"unknown catalog observables {missing}")
    return [cat[n] for n in names]


def run_kolmogorov(cfg: dict, seed: int, workers=None, identity: bool = True) -> KolmogorovRun:
    sec = cfg["kolmogorov"]
    model = model_for(cfg, "kolmogorov")
    probe, cc = run_feller(cfg, seed)
    alpha = float(sec["alpha_factor"]) * cc.alpha_0
    params = feller_params(cfg, d=int(sec["d_K"]), alpha=alpha)
    lam = float(sec["yosida_lam"])
    u0 = float(sec["u0_scale"]) * np.sqrt(params.Q_inf)
    sols, idents = {}, {}
    ens = None
    if identity:
        steps = int(sec["identity_steps"])
        sim = SimConfig(model, params.basis, T=params.t_max, dt=params.t_max / steps, yosida_lam=lam,
                        noise=NoiseSpec(model.delta), u0=tuple(u0), seed=seed,
                        ensemble_size=int(sec["identity_size"]), linear_part="exact", scheme="exponential")
        ens = simulate_ensemble(sim, workers=workers)
    for g in kolmogorov_observables(cfg, params):
        sol = ok.kolmogorov_fixed_point(model, g, params, lam, alpha_0=cc.alpha_0, mc_size=int(sec["mc_size"]),
                                        points_per_axis=int(sec["points_per_axis"]), seed=seed, workers=workers)
        sols[g.name] = sol
        if ens is not None:
            idents[g.name] = ok.resolvent_identity_check(sol, ens)
    return KolmogorovRun(probe, cc, alpha, sols, idents, u0)

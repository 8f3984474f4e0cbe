"""Empirical laws of the approximating ensembles and their distances.

A fixed catalog of bounded observables is integrated against the discount
``e^{-alpha t}`` along each path; the law distance of two ensembles is the
largest gap between the resulting means, reported together with an energy
distance of low-mode marginals. A ladder of regularization parameters then
tests whether the laws settle to a single limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .branch_lab import branch_separation, trajectory_distance
from .ou_kolmogorov import Observable
from .spde_sim import (Ensemble, NoiseSpec, SimConfig, SimulationError, apriori_bound, mollify_G,
                       regularized_initial_datum, simulate_ensemble)

__all__ = [
    "CATALOG_VERSION",
    "FunctionalSet",
    "observable_catalog",
    "discounted_observable",
    "LawDistance",
    "law_distance",
    "energy_distance",
    "StabilityReport",
    "stability_experiment",
    "ContrastReport",
    "deterministic_contrast",
]

CATALOG_VERSION = "catalog-v1"


def _mode(x, k):
    return x[..., min(k, x.shape[-1]) - 1]


def observable_catalog(scale: float = 0.1) -> list[Observable]:
    """The twelve fixed test functions, all bounded by one.

    ``scale`` sets the state amplitude they resolve. Modes beyond the state
    dimension fall back to the last available one.
    """
    s = float(scale)
    if not s > 0:
        raise ValueError("scale must be positive")

    def bump(center_mode, shift, width):
        def fn(x):
            c = np.zeros(x.shape[-1])
            if center_mode:
                c[min(center_mode, x.shape[-1]) - 1] = shift
            return np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * width**2))
        return fn

    obs = [
        Observable("bump_0", bump(0, 0.0, s), 1.0, lipschitz=math.exp(-0.5) / s),
        Observable("bump_+e1", bump(1, s, s), 1.0, lipschitz=math.exp(-0.5) / s),
        Observable("bump_-e1", bump(1, -s, s), 1.0, lipschitz=math.exp(-0.5) / s),
        Observable("bump_wide", bump(0, 0.0, 2 * s), 1.0, lipschitz=math.exp(-0.5) / (2 * s)),
    ]
    for k in (1, 2, 3):
        obs.append(Observable(f"tanh_{k}", (lambda x, k=k: np.tanh(_mode(x, k) / s)), 1.0, lipschitz=1 / s))
    for k in (1, 2, 3):
        obs.append(Observable(f"sin_{k}", (lambda x, k=k: np.sin(_mode(x, k) / s)), 1.0, lipschitz=1 / s))
    obs.append(Observable("energy_sat", lambda x: np.sum(x**2, -1) / (s**2 + np.sum(x**2, -1)), 1.0,
                          lipschitz=1.0 / s))
    obs.append(Observable("tanh_12", lambda x: np.tanh((_mode(x, 1) + _mode(x, 2)) / s), 1.0,
                          lipschitz=math.sqrt(2) / s))
    return obs


@dataclass
class FunctionalSet:
    """Discounted path functionals ``int_0^T e^{-alpha t} g_j(u(t)) dt``."""

    observables: list
    alpha: float = 2.0
    version: str = CATALOG_VERSION

    @classmethod
    def default(cls, scale: float = 0.1, alpha: float = 2.0) -> "FunctionalSet":
        return cls(observable_catalog(scale), alpha)

    @property
    def names(self) -> list[str]:
        return [g.name for g in self.observables]

    def evaluate(self, ens: Ensemble) -> np.ndarray:
        """Per-trajectory functional values, shape ``(n_traj, n_functionals)``."""
        w = _trapezoid_discount(ens.times, self.alpha)
        return np.stack([g(ens.states) @ w for g in self.observables], axis=-1)

    def tail_bound(self, T: float) -> float:
        return max(g.sup for g in self.observables) * math.exp(-self.alpha * T) / self.alpha


def _trapezoid_discount(times, alpha):
    times = np.asarray(times, dtype=float)
    h = np.diff(times)
    w = np.zeros(times.size)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w * np.exp(-alpha * times)


def discounted_observable(traj, g, alpha: float, T: float | None = None):
    """Trapezoid value of ``int_0^T e^{-alpha t} g(u(t)) dt`` and the tail bound.

    Returns
    -------
    value : float
    tail : float
        ``sup|g| e^{-alpha T} / alpha``, the neglected part of the infinite horizon.
    """
    times = np.asarray(traj.times)
    if T is not None:
        keep = times <= T + 1e-12
        times = times[keep]
        states = np.asarray(traj.states)[keep]
    else:
        states = np.asarray(traj.states)
        T = float(times[-1])
    val = float(g(states) @ _trapezoid_discount(times, alpha))
    tail = g.sup * math.exp(-alpha * T) / alpha
    return val, tail


# distances -----------------------------------------------------------------------------


def energy_distance(X, Y) -> float:
    """V-statistic energy distance ``2 E|X-Y| - E|X-X'| - E|Y-Y'|``."""
    return float(2 * cdist(X, Y).mean() - cdist(X, X).mean() - cdist(Y, Y).mean())


@dataclass
class LawDistance:
    value: float
    radius: float
    per_functional: np.ndarray
    energy: float
    energy_radius: float
    paired: bool


def _marginal_features(ens: Ensemble, n_times: int = 4, n_modes: int = 3) -> np.ndarray:
    T = ens.times[-1]
    idx = [int(np.argmin(np.abs(ens.times - T * (i + 1) / n_times))) for i in range(n_times)]
    k = min(n_modes, ens.states.shape[-1])
    return ens.states[:, idx, :k].reshape(ens.size, -1)


def _counts(rng, n, n_boot):
    return rng.multinomial(n, np.full(n, 1.0 / n), size=n_boot).astype(float)


def law_distance(a: Ensemble, b: Ensemble, functionals: FunctionalSet, n_boot: int = 400,
                 seed=0, paired: bool | None = None, max_energy_points: int = 1000) -> LawDistance:
    """Catalog distance ``max_j |E_a G_j - E_b G_j|`` with bootstrap radius.

    The radius is the 95% bootstrap quantile of the centred max deviation.
    Ensembles sharing seed and size are resampled jointly (``paired``), which
    is the right bootstrap for common random numbers.
    """
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times):
        raise ValueError("ensembles must share their save times")
    if a.states.shape[-1] != b.states.shape[-1]:
        raise ValueError("ensembles must share the state dimension")
    if paired is None:
        paired = a.size == b.size and a.config.seed == b.config.seed
    if paired and a.size != b.size:
        raise ValueError("paired bootstrap needs equal ensemble sizes")
    Fa, Fb = functionals.evaluate(a), functionals.evaluate(b)
    diff = Fa.mean(0) - Fb.mean(0)
    value = float(np.max(np.abs(diff)))
    rng = np.random.Generator(np.random.Philox(seed))
    ca = _counts(rng, a.size, n_boot)
    cb = ca if paired else _counts(rng, b.size, n_boot)
    boot = ca @ Fa / a.size - cb @ Fb / b.size
    radius = float(np.quantile(np.max(np.abs(boot - diff), axis=1), 0.95))

    na, nb = min(a.size, max_energy_points), min(b.size, max_energy_points)
    Xa, Xb = _marginal_features(a)[:na], _marginal_features(b)[:nb]
    Dab, Daa, Dbb = cdist(Xa, Xb), cdist(Xa, Xa), cdist(Xb, Xb)
    e = float(2 * Dab.mean() - Daa.mean() - Dbb.mean())
    ea = _counts(rng, na, n_boot)
    eb = ea if (paired and na == nb) else _counts(rng, nb, n_boot)
    eboot = (2 * np.einsum("bi,ij,bj->b", ea, Dab, eb) / (na * nb)
             - np.einsum("bi,ij,bj->b", ea, Daa, ea) / na**2
             - np.einsum("bi,ij,bj->b", eb, Dbb, eb) / nb**2)
    e_rad = float(np.quantile(np.abs(eboot - e), 0.95))
    return LawDistance(value, radius, diff, e, e_rad, bool(paired))


# ladder --------------------------------------------------------------------------------


@dataclass
class StabilityReport:
    ladder: list  # (yosida_lam, n)
    distance: np.ndarray  # symmetric, NaN for failed rungs
    radius: np.ndarray
    energy: np.ndarray
    consecutive: list  # (D_i, r_i)
    cauchy: bool
    means: np.ndarray  # (n_rungs, n_functionals)
    mean_radius: np.ndarray
    tightness: dict
    failures: dict = field(default_factory=dict)
    functional_names: list = field(default_factory=list)

    def summary(self) -> str:
        parts = [f"D{i}={d:.4g}+-{r:.2g}" for i, (d, r) in enumerate(self.consecutive)]
        return f"cauchy={'PASS' if self.cauchy else 'FAIL'} " + " ".join(parts)


def _strictly_decreasing(consecutive) -> bool:
    return all(d0 - d1 > r0 + r1 for (d0, r0), (d1, r1) in zip(consecutive[:-1], consecutive[1:]))


def rung_config(base: SimConfig, yosida_lam: float, n: float) -> SimConfig:
    """Rung on the ladder: ``lam_n``, ``G_n`` and ``u0^n = (I + L/n)^{-1} u0``."""
    base_noise = NoiseSpec(base.noise.delta, math.inf, base.noise.scale)
    u0n = regularized_initial_datum(np.asarray(base.u0), n, base.basis)
    return base.replace(yosida_lam=yosida_lam, noise=mollify_G(base_noise, n), u0=tuple(u0n))


def stability_experiment(base: SimConfig, ladder, functionals: FunctionalSet | None = None,
                         workers=None, n_boot: int = 400, seed=0) -> StabilityReport:
    """Simulate every rung with common random numbers and compare their laws."""
    lams = [lam for lam, _ in ladder]
    if any(l1 >= l0 for l0, l1 in zip(lams[:-1], lams[1:])):
        raise ValueError("yosida_lam must decrease along the ladder")
    fs = functionals or FunctionalSet.default()
    ens, failures = [], {}
    for i, (lam, n) in enumerate(ladder):
        try:
            ens.append(simulate_ensemble(rung_config(base, lam, n), workers=workers))
        except SimulationError as exc:
            ens.append(None)
            failures[i] = str(exc)
    R = len(ladder)
    D = np.full((R, R), np.nan)
    Rad = np.full((R, R), np.nan)
    E = np.full((R, R), np.nan)
    for i in range(R):
        if ens[i] is None:
            continue
        D[i, i] = Rad[i, i] = E[i, i] = 0.0
        for j in range(i + 1, R):
            if ens[j] is None:
                continue
            ld = law_distance(ens[i], ens[j], fs, n_boot=n_boot, seed=[int(seed), i, j])
            D[i, j] = D[j, i] = ld.value
            Rad[i, j] = Rad[j, i] = ld.radius
            E[i, j] = E[j, i] = ld.energy
    consecutive = [(float(D[i, i + 1]), float(Rad[i, i + 1])) for i in range(R - 1)]
    cauchy = not failures and _strictly_decreasing(consecutive)
    means = np.full((R, len(fs.observables)), np.nan)
    mrad = np.full_like(means, np.nan)
    tight = {"q99": [], "mean_energy": [], "bound": [], "int_V2_q50": [], "int_V2_q99": []}
    for i, e in enumerate(ens):
        if e is None:
            for v in tight.values():
                v.append(math.nan)
            continue
        F = fs.evaluate(e)
        means[i] = F.mean(0)
        mrad[i] = 1.96 * F.std(0, ddof=1) / math.sqrt(e.size)
        sup2 = e.acc["sup_H2"][:, -1]
        intV = e.acc["int_V2"][:, -1]
        tight["q99"].append(float(np.quantile(sup2 + intV, 0.99)))
        tight["mean_energy"].append(float(np.mean(sup2 + e.acc["dissip"][:, -1] / e.config.model.k_A)))
        tight["bound"].append(apriori_bound(e.config))
        tight["int_V2_q50"].append(float(np.quantile(intV, 0.5)))
        tight["int_V2_q99"].append(float(np.quantile(intV, 0.99)))
    tight["uniform"] = bool(all(m <= b for m, b in zip(tight["mean_energy"], tight["bound"])))
    return StabilityReport(list(ladder), D, Rad, E, consecutive, cauchy, means, mrad, tight, failures, fs.names)


# deterministic contrast ----------------------------------------------------------------


@dataclass
class ContrastReport:
    eps: float
    separation: float  # L^2(0,T;H) between the two noiseless runs
    terminal_separation: float
    branch_separation: float  # closed form, t_star = 0, opposite signs
    deterministic_splits: bool
    noisy_distance: float | None = None
    noisy_radius: float | None = None
    noisy_spread: float | None = None
    noisy_overlap: bool | None = None

    @property
    def passed(self) -> bool:
        return self.deterministic_splits and self.noisy_overlap is not False


def deterministic_contrast(base: SimConfig, v_star, eps: float = 1e-3, noisy_size: int | None = None,
                           functionals: FunctionalSet | None = None, workers=None, n_boot: int = 400,
                           seed=0) -> ContrastReport:
    """Noiseless runs from ``+eps v*`` and ``-eps v*`` against their noisy counterparts.

    Without noise the two runs follow opposite branches, so their separation
    is compared with the closed-form distance of the ``t_star = 0`` branches.
    With noise (``noisy_size`` trajectories and independent seeds) the two
    laws should agree within twice the bootstrap radius.
    """
    v = np.asarray(v_star, dtype=float)
    quiet = NoiseSpec(base.noise.delta, math.inf, 0.0)
    runs = []
    for sgn in (1, -1):
        cfg = base.replace(noise=quiet, u0=tuple(sgn * eps * v), ensemble_size=1)
        runs.append(simulate_ensemble(cfg))
    times = runs[0].times
    sep = trajectory_distance(runs[0].states[0], runs[1].states[0], times)
    term = float(np.linalg.norm(runs[0].states[0, -1] - runs[1].states[0, -1]))
    ref = branch_separation(0.0, 0.0, base.T, base.model.p, float(np.linalg.norm(v)), 1, -1)
    rep = ContrastReport(eps, sep, term, ref, bool(eps > 0 and sep >= 0.5 * ref))
    if noisy_size:
        fs = functionals or FunctionalSet.default()
        noisy = []
        for k, sgn in enumerate((1, -1)):
            cfg = base.replace(u0=tuple(sgn * eps * v), ensemble_size=noisy_size, seed=base.seed + k)
            noisy.append(simulate_ensemble(cfg, workers=workers))
        ld = law_distance(noisy[0], noisy[1], fs, n_boot=n_boot, seed=seed, paired=False)
        spread = float(np.std(np.linalg.norm(noisy[0].states[:, -1], axis=-1)))
        rep.noisy_distance, rep.noisy_radius, rep.noisy_spread = ld.value, ld.radius, spread
        rep.noisy_overlap = bool(ld.value <= 2 * ld.radius)
    return rep

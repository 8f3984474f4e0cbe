"""Ensemble integration of the Yosida-regularized stochastic system.

The Galerkin system integrated here is

    du + a * u dt = b(u) dt + g dW,      u(0) = u0,

where ``a`` is the diagonal linear multiplier (``k_A lambda_k / (1 + lam
lambda_k)`` for the Yosida system, ``k_A lambda_k`` for the hybrid system
matching the Kolmogorov operator), ``b = k_A F + K_lam - k_A f_lam`` is the
bounded explicit drift and ``g`` the diagonal noise amplitudes.

Randomness is counter based: the Gaussian increment of trajectory ``i`` at
step ``m`` and mode ``k`` is a pure function of ``(seed, i, m, k)``, so an
ensemble does not depend on how its trajectories are batched or scheduled.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .nonlinear_ops import DNLConfig, F_op, K_lambda_op, _nemytskii, f_yosida_scalar
from .spectral_core import SpectralBasis, resolvent

__all__ = [
    "NoiseSpec",
    "SimConfig",
    "SimulationError",
    "Trajectory",
    "Ensemble",
    "mollify_G",
    "linear_multiplier",
    "explicit_drift",
    "em_step",
    "simulate_trajectory",
    "simulate_ensemble",
    "energy_diagnostic",
    "apriori_bound",
    "noise_increments",
]

NOISE_BLOCK = 64  # steps drawn per counter block
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal noise ``g_k = scale * lambda_k**-delta / (1 + lambda_k / n)``.

    ``n = inf`` is the unmollified coefficient ``G``.
    """

    delta: float
    n: float = math.inf
    scale: float = 1.0

    def __post_init__(self):
        if not (self.n >= 1 or math.isinf(self.n)):
            raise ValueError(f"mollifier index must be >= 1, got {self.n}")
        if self.scale < 0:
            raise ValueError("noise scale must be nonnegative")

    def base_amplitudes(self, basis: SpectralBasis) -> np.ndarray:
        return self.scale * basis.eigenvalues ** (-self.delta)

    def amplitudes(self, basis: SpectralBasis) -> np.ndarray:
        g = self.base_amplitudes(basis)
        if math.isinf(self.n):
            return g
        return g / (1.0 + basis.eigenvalues / self.n)

    def hs_norm(self, basis: SpectralBasis) -> float:
        """Hilbert-Schmidt norm over the retained modes."""
        return float(np.linalg.norm(self.amplitudes(basis)))

    def covariance(self, basis: SpectralBasis) -> np.ndarray:
        """Diagonal of ``Q = G G*``."""
        return self.amplitudes(basis) ** 2


def mollify_G(noise: NoiseSpec, n: float) -> NoiseSpec:
    """Return ``G_n = (I + L/n)^{-1} G``; ``n = inf`` returns ``G`` itself."""
    if not math.isinf(noise.n):
        raise ValueError("noise is already mollified; mollify the base coefficient")
    if not (n >= 1 or math.isinf(n)):
        raise ValueError(f"mollifier index must be >= 1, got {n}")
    return dataclasses.replace(noise, n=float(n))


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce an ensemble bit for bit."""

    model: DNLConfig
    basis: SpectralBasis
    T: float
    dt: float
    yosida_lam: float
    noise: NoiseSpec
    u0: tuple = None
    seed: int = 0
    ensemble_size: int = 1
    linear_part: str = "yosida"
    scheme: str = "semi-implicit"
    save_every: int = 1
    block_size: int = 256
    keep_increments: bool = False

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("T and dt must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T/dt = {steps} is not an integer")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if not self.yosida_lam > 0:
            raise ValueError("yosida_lam must be positive")
        if self.linear_part not in ("yosida", "exact"):
            raise ValueError(f"unknown linear_part {self.linear_part!r}")
        if self.scheme not in ("semi-implicit", "exponential"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.save_every < 1 or self.n_steps % self.save_every:
            raise ValueError("save_every must divide the step count")
        u0 = np.zeros(self.basis.d) if self.u0 is None else np.asarray(self.u0, dtype=float)
        if u0.shape != (self.basis.d,):
            raise ValueError(f"u0 must have {self.basis.d} coefficients")
        object.__setattr__(self, "u0", tuple(float(c) for c in u0))
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def save_times(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.save_every) * self.dt

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


class SimulationError(RuntimeError):
    """A trajectory produced a non-finite state."""

    def __init__(self, indices, step):
        self.indices = list(indices)
        self.step = step
        super().__init__(f"non-finite state in trajectories {self.indices[:10]} at step {step}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_times, d)
    increments: np.ndarray | None = None  # (n_steps, d) standard normals


@dataclass
class Ensemble:
    """Saved states of many trajectories plus per-path running integrals.

    ``acc`` maps names to arrays of shape ``(n_traj, n_save)`` holding the
    running quantities at the save times:

    ``sup_H2``      running max of ``||u||_H^2``
    ``int_V2``      trapezoid ``int ||u||_V^2``
    ``dissip``      ``dt sum <a u_{m+1}, u_{m+1}>``
    ``drift``       ``dt sum <b(u_m), u_m>``
    ``drift_bound`` ``dt sum B ||u_m||`` with ``B = k_A ||F||_inf + C_A' + k_A C_f``
    ``mart``        ``sum <u_m, sigma_m>``
    ``noise_sq``    ``sum 1/2 ||sigma_m||^2``
    ``remainder``   ``sum dt <b, sigma> + dt^2/2 ||b||^2 - dt^2/2 ||a u_{m+1}||^2``
    """

    config: SimConfig
    times: np.ndarray
    states: np.ndarray  # (n_traj, n_save, d)
    acc: dict = field(default_factory=dict)
    increments: np.ndarray | None = None  # (n_traj, n_steps, d) when requested

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.times, self.states[i])


# dynamics ------------------------------------------------------------------------


def linear_multiplier(cfg: SimConfig) -> np.ndarray:
    lam_k = cfg.basis.eigenvalues
    kA = cfg.model.k_A
    if cfg.linear_part == "exact":
        return kA * lam_k
    return kA * lam_k / (1.0 + cfg.yosida_lam * lam_k)


def explicit_drift(u, cfg: SimConfig) -> np.ndarray:
    """Bounded part ``k_A F(u) + K_lam(u) - k_A f_lam(u)`` of the drift."""
    m, basis = cfg.model, cfg.basis
    out = m.k_A * F_op(u, m, basis) + K_lambda_op(u, cfg.yosida_lam, m, basis)
    if m.f_gain:
        out = out - m.k_A * _nemytskii(lambda v: f_yosida_scalar(v, cfg.yosida_lam, m), u, basis)
    return out


def drift_bound(cfg: SimConfig) -> float:
    m = cfg.model
    return m.k_A * m.F_sup + m.C_A_prime_tight + m.k_A * m.C_f


def _step_coefficients(cfg: SimConfig):
    a = linear_multiplier(cfg)
    g = cfg.noise.amplitudes(cfg.basis)
    dt = cfg.dt
    if cfg.scheme == "semi-implicit":
        inv = 1.0 / (1.0 + dt * a)
        return inv, dt * inv, math.sqrt(dt) * g * inv
    decay = np.exp(-a * dt)
    phi1 = np.where(a > 0, -np.expm1(-a * dt) / np.where(a > 0, a, 1.0), dt)
    var = np.where(a > 0, -np.expm1(-2 * a * dt) / (2 * np.where(a > 0, a, 1.0)), dt)
    return decay, phi1, np.sqrt(var) * g


def em_step(u, cfg: SimConfig, xi) -> np.ndarray:
    """Advance states ``u`` (shape ``(..., d)``) by one step with increments ``xi``.

    Semi-implicit scheme:
    ``u <- (u + dt b(u) + sqrt(dt) g xi) / (1 + dt a)``.
    Exponential scheme (exact for the linear part):
    ``u <- e^{-a dt} u + phi_1 b(u) + sqrt((1 - e^{-2 a dt}) / 2a) g xi``.
    """
    c_u, c_b, c_xi = _step_coefficients(cfg)
    return c_u * np.asarray(u, dtype=float) + c_b * explicit_drift(u, cfg) + c_xi * np.asarray(xi)


def noise_increments(seed: int, traj: int, block: int, d: int) -> np.ndarray:
    """Standard normals for steps ``[block*NOISE_BLOCK, (block+1)*NOISE_BLOCK)`` of one path."""
    bitgen = np.random.Philox(key=[int(seed) & _MASK64, int(traj)], counter=[0, int(block), 0, 0])
    return np.random.Generator(bitgen).standard_normal((NOISE_BLOCK, d))


def _run_block(cfg: SimConfig, start: int, stop: int):
    basis = cfg.basis
    d = basis.d
    n = stop - start
    n_steps = cfg.n_steps
    n_save = n_steps // cfg.save_every + 1
    a = linear_multiplier(cfg)
    g = cfg.noise.amplitudes(basis)
    lam_k = basis.eigenvalues
    dt = cfg.dt
    semi = cfg.scheme == "semi-implicit"
    c_u, c_b, c_xi = _step_coefficients(cfg)
    B = drift_bound(cfg)

    u = np.tile(np.asarray(cfg.u0, dtype=float), (n, 1))
    states = np.empty((n, n_save, d))
    states[:, 0] = u
    names = ("sup_H2", "int_V2", "dissip", "drift", "drift_bound", "mart", "noise_sq", "remainder")
    acc = {k: np.zeros((n, n_save)) for k in names}
    run = {k: np.zeros(n) for k in names}
    run["sup_H2"] = np.sum(u**2, axis=1)
    acc["sup_H2"][:, 0] = run["sup_H2"]
    incs = np.empty((n, n_steps, d)) if cfg.keep_increments else None
    V2_prev = np.sum(lam_k * u**2, axis=1)
    xi_block = None
    for m in range(n_steps):
        j = m % NOISE_BLOCK
        if j == 0:
            blk = m // NOISE_BLOCK
            xi_block = np.stack([noise_increments(cfg.seed, start + i, blk, d) for i in range(n)])
        xi = xi_block[:, j]
        if incs is not None:
            incs[:, m] = xi
        b = explicit_drift(u, cfg)
        u_new = c_u * u + c_b * b + c_xi * xi
        bad = ~np.all(np.isfinite(u_new), axis=1)
        if bad.any():
            raise SimulationError(start + np.flatnonzero(bad), m)
        sigma = math.sqrt(dt) * g * xi
        run["drift"] += dt * np.sum(b * u, axis=1)
        run["drift_bound"] += dt * B * np.sqrt(np.sum(u**2, axis=1))
        run["mart"] += np.sum(u * sigma, axis=1)
        run["noise_sq"] += 0.5 * np.sum(sigma**2, axis=1)
        if semi:
            au = a * u_new
            run["dissip"] += dt * np.sum(au * u_new, axis=1)
            run["remainder"] += (dt * np.sum(b * sigma, axis=1) + 0.5 * dt**2 * np.sum(b**2, axis=1)
                                 - 0.5 * dt**2 * np.sum(au**2, axis=1))
        else:
            run["dissip"] += 0.5 * dt * (np.sum(a * u * u, axis=1) + np.sum(a * u_new * u_new, axis=1))
        V2 = np.sum(lam_k * u_new**2, axis=1)
        run["int_V2"] += 0.5 * dt * (V2_prev + V2)
        V2_prev = V2
        u = u_new
        run["sup_H2"] = np.maximum(run["sup_H2"], np.sum(u**2, axis=1))
        if (m + 1) % cfg.save_every == 0:
            s = (m + 1) // cfg.save_every
            states[:, s] = u
            for k in names:
                acc[k][:, s] = run[k]
    return states, acc, incs


def simulate_ensemble(cfg: SimConfig, workers: int | None = None) -> Ensemble:
    """Simulate ``cfg.ensemble_size`` independent trajectories.

    Trajectories are processed in fixed blocks of ``cfg.block_size``; the
    output is identical for every ``workers`` value.
    """
    N = cfg.ensemble_size
    bounds = [(s, min(s + cfg.block_size, N)) for s in range(0, N, cfg.block_size)]
    if workers is None or workers <= 1 or len(bounds) == 1:
        parts = [_run_block(cfg, s, e) for s, e in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda se: _run_block(cfg, *se), bounds))
    states = np.concatenate([p[0] for p in parts])
    acc = {k: np.concatenate([p[1][k] for p in parts]) for k in parts[0][1]}
    ens = Ensemble(cfg, cfg.save_times, states, acc)
    if cfg.keep_increments:
        ens.increments = np.concatenate([p[2] for p in parts])
    return ens


def simulate_trajectory(cfg: SimConfig, index: int = 0) -> Trajectory:
    """Single path ``index`` of the ensemble defined by ``cfg``, every step saved."""
    one = cfg.replace(save_every=1)
    states, _, incs = _run_block(one, index, index + 1)
    return Trajectory(one.save_times, states[0], None if incs is None else incs[0])


# diagnostics -------------------------------------------------------------------------


@dataclass
class EnergyReport:
    times: np.ndarray
    defect: np.ndarray  # (n_traj, n_save)
    remainder: np.ndarray
    noise_fluctuation: np.ndarray
    mean_final: float
    stderr_final: float
    mode: str

    @property
    def passes(self) -> bool:
        """Mean terminal defect no more than two standard errors above zero."""
        return self.mean_final <= 2.0 * self.stderr_final


def energy_diagnostic(ens: Ensemble, mode: str = "bound") -> EnergyReport:
    """Discrete Ito energy balance for the semi-implicit scheme.

    ``defect = LHS - RHS`` at every save time, where

    ``LHS = 1/2 ||u_m||^2 + dt sum <a u_{j+1}, u_{j+1}>`` and
    ``RHS = 1/2 ||u_0||^2 + drift + sum <u_j, sigma_j> + t/2 ||G_n||_HS^2``.

    With ``mode="realized"`` the drift term is ``dt sum <b(u_j), u_j>`` and the
    defect equals ``remainder + noise_fluctuation`` identically. With
    ``mode="bound"`` it is ``dt sum B ||u_j||`` as in the a priori estimate,
    and the expected defect is nonpositive up to an O(dt) remainder.
    """
    cfg = ens.config
    if cfg.scheme != "semi-implicit":
        raise ValueError("the discrete energy identity is derived for the semi-implicit scheme")
    if mode not in ("bound", "realized"):
        raise ValueError(f"unknown mode {mode!r}")
    u = ens.states
    acc = ens.acc
    hs2 = cfg.noise.hs_norm(cfg.basis) ** 2
    lhs = 0.5 * np.sum(u**2, axis=-1) + acc["dissip"]
    drift = acc["drift_bound"] if mode == "bound" else acc["drift"]
    rhs = 0.5 * np.sum(u[:, :1] ** 2, axis=-1) + drift + acc["mart"] + 0.5 * ens.times * hs2
    defect = lhs - rhs
    fluct = acc["noise_sq"] - 0.5 * ens.times * hs2
    final = defect[:, -1]
    se = float(np.std(final, ddof=1) / math.sqrt(final.size)) if final.size > 1 else 0.0
    return EnergyReport(ens.times, defect, acc["remainder"], fluct, float(np.mean(final)), se, mode)


def apriori_bound(cfg: SimConfig) -> float:
    """Bound on ``E[sup_t ||u||^2 + k_A^{-1} int <a u, u>]`` independent of ``lam`` and ``n``.

    Writing ``u = S u0 + int S b + Z`` with the contraction semigroup ``S``,
    ``E sup ||u||^2 <= 3 (||u0||^2 + T^2 B^2 + X)`` where ``X`` bounds
    ``E sup ||Z||^2`` through the Ito formula and the BDG inequality
    (constant 3), using ``||G_n|| <= ||G||``. The dissipation term follows from
    the Ito energy identity.
    """
    basis = cfg.basis
    base = dataclasses.replace(cfg.noise, n=math.inf)
    g = base.amplitudes(basis)
    G2 = float(np.sum(g**2))
    gmax = float(np.max(g))
    T = cfg.T
    B = drift_bound(cfg)
    u0n2 = float(np.sum(np.asarray(cfg.u0) ** 2))
    half = 1.5 * gmax * math.sqrt(T)
    X = (half + math.sqrt(half**2 + T * G2)) ** 2
    sup_bound = 3.0 * (u0n2 + T**2 * B**2 + X)
    dissip_bound = (0.5 * u0n2 + B * T * math.sqrt(sup_bound) + 0.5 * T * G2) / cfg.model.k_A
    return sup_bound + dissip_bound


def regularized_initial_datum(u0, n: float, basis: SpectralBasis) -> np.ndarray:
    """``u0^n = (I + L/n)^{-1} u0``, V-valued and converging to ``u0`` in H."""
    if math.isinf(n):
        return np.asarray(u0, dtype=float)
    return resolvent(u0, 1.0 / n, basis)

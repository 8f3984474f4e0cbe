"""Ornstein-Uhlenbeck semigroup, strong Feller probes and the regularized Kolmogorov solver.

The OU process here solves ``dX = -a X dt + G dW`` with the diagonal drift
multiplier ``a_k = drift_scale * lambda_k`` and covariance ``Q = diag(q_k)``.
With ``drift_scale = k_A`` this is the linear part of the hybrid equation
simulated by :mod:`dnlab.spde_sim` with ``linear_part="exact"``.

The mild Kolmogorov map

    S psi(x) = int_0^inf e^{-alpha t} R_t[g + (b, D psi)](x) dt,
    b = k_A F + K_lam - k_A f_lam,

is affine in ``D psi``. The solver evaluates it once on a design grid with
common random numbers, through the cardinal functions of a thin-plate RBF
interpolant, and then iterates the resulting finite affine map exactly.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RBFInterpolator
from scipy.special import gamma

from .nonlinear_ops import DNLConfig, F_op, K_lambda_op, _nemytskii, f_yosida_scalar
from .spectral_core import SpectralBasis

__all__ = [
    "OUParams",
    "Observable",
    "Qt_closed",
    "Rt_apply",
    "Rt_gradient",
    "FellerProbe",
    "feller_exponent_probe",
    "sign_family",
    "ContractionConstants",
    "contraction_constants",
    "KolmogorovError",
    "ContractionError",
    "MCNoiseError",
    "KolmogorovSolution",
    "kolmogorov_fixed_point",
    "IdentityReport",
    "resolvent_identity_check",
    "discount_weights",
    "kolmogorov_drift",
]


@dataclass(frozen=True)
class OUParams:
    """Data of the OU semigroup.

    Parameters
    ----------
    basis : SpectralBasis
    q : sequence of float
        Diagonal of ``Q = G G*``, all positive.
    alpha : float
        Discount rate of the resolvent.
    drift_scale : float
        Factor in front of ``L`` in the OU drift.
    n_quad : int
        Gauss-Legendre nodes of the time quadrature.
    tail_tol : float
        Truncation horizon is chosen so that ``exp(-alpha T_max) = tail_tol``.
    """

    basis: SpectralBasis
    q: tuple
    alpha: float = 1.0
    drift_scale: float = 1.0
    n_quad: int = 64
    tail_tol: float = 1e-8

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (self.basis.d,):
            raise ValueError(f"q must have {self.basis.d} entries")
        if not np.all(q > 0):
            raise ValueError("q_k must be positive (G injective)")
        if not self.alpha > 0 or not self.drift_scale > 0:
            raise ValueError("alpha and drift_scale must be positive")
        object.__setattr__(self, "q", tuple(float(v) for v in q))

    @classmethod
    def from_noise(cls, basis, noise, alpha=1.0, drift_scale=1.0, **kw) -> "OUParams":
        return cls(basis, tuple(noise.covariance(basis)), alpha, drift_scale, **kw)

    @property
    def a(self) -> np.ndarray:
        return self.drift_scale * self.basis.eigenvalues

    @property
    def q_arr(self) -> np.ndarray:
        return np.asarray(self.q)

    @property
    def Q_inf(self) -> np.ndarray:
        return self.q_arr / (2.0 * self.a)

    @property
    def t_max(self) -> float:
        return -math.log(self.tail_tol) / self.alpha

    def replace(self, **changes) -> "OUParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Observable:
    """Bounded test function on the coefficient space.

    ``fn`` maps arrays of shape ``(..., d)`` to ``(...)``. ``sup`` is an upper
    bound of ``|fn|`` (``inf`` for the unbounded linear oracles), ``lipschitz``
    and ``holder`` are optional regularity constants.
    """

    name: str
    fn: Callable
    sup: float
    lipschitz: float | None = None
    holder: float | None = None

    def __call__(self, x) -> np.ndarray:
        return self.fn(np.asarray(x, dtype=float))


def Qt_closed(t: float, params: OUParams) -> np.ndarray:
    """Diagonal of ``Q_t = 1/2 a^{-1} (1 - e^{-2 t a}) Q``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    a = params.a
    return -np.expm1(-2.0 * t * a) / (2.0 * a) * params.q_arr


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _pairs(mc_size: int, d: int, rng) -> np.ndarray:
    if mc_size < 2:
        raise ValueError("mc_size must be at least 2")
    return rng.standard_normal((mc_size // 2, d))


def Rt_apply(phi, t: float, x, params: OUParams, mc_size: int = 10_000, seed=0):
    """Monte Carlo ``R_t phi(x)`` with antithetic pairs.

    Returns
    -------
    value : float
    radius : float
        Half width of the 95% confidence interval.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    z = _pairs(mc_size, params.basis.d, _rng(seed))
    m = np.exp(-t * params.a) * x
    s = np.sqrt(Qt_closed(t, params))
    vals = 0.5 * (phi(m + s * z) + phi(m - s * z))
    se = np.std(vals, ddof=1) / math.sqrt(vals.size)
    return float(np.mean(vals)), float(1.96 * se)


def Rt_gradient(phi, t: float, x, params: OUParams, mc_size: int = 10_000, seed=0):
    """Integration-by-parts estimate of ``D R_t phi(x)``.

    ``D_k R_t phi(x) = e^{-t a_k} E[phi(e^{-ta} x + Y) Y_k] / Q_{t,k}``, which
    needs ``phi`` only bounded and measurable.

    Returns
    -------
    grad : ndarray, shape (d,)
    stderr : ndarray, shape (d,)
    """
    if not t > 0:
        raise ValueError("t must be positive")
    Qt = Qt_closed(t, params)
    if np.any(Qt < np.finfo(float).tiny):
        raise FloatingPointError(f"Q_t below the machine floor at t={t}")
    x = np.asarray(x, dtype=float)
    z = _pairs(mc_size, params.basis.d, _rng(seed))
    m = np.exp(-t * params.a) * x
    s = np.sqrt(Qt)
    # Y_k / Q_{t,k} = z_k / s_k
    w = (0.5 * (phi(m + s * z) - phi(m - s * z)))[:, None] * z
    scale = np.exp(-t * params.a) / s
    grad = scale * np.mean(w, axis=0)
    se = scale * np.std(w, axis=0, ddof=1) / math.sqrt(w.shape[0])
    return grad, se


# strong Feller probe -------------------------------------------------------------------


def sign_family(d: int) -> list[Observable]:
    """Per-mode sign observables, the discontinuous extremals of the gradient bound."""
    return [Observable(f"sign_{k + 1}", (lambda x, k=k: np.sign(x[..., k])), 1.0) for k in range(d)]


@dataclass
class FellerProbe:
    times: np.ndarray
    sup_grad: np.ndarray
    stderr: np.ndarray
    slope: float
    intercept: float
    C_R_emp: float
    exponent: float  # 1/2 + delta

    def bound(self) -> np.ndarray:
        """``C_R_emp t^{-(1/2 + delta)}`` on the probe times."""
        return self.C_R_emp * self.times ** (-self.exponent)


def feller_exponent_probe(params: OUParams, delta: float, observables=None, points=None,
                          window=None, n_times: int = 13, mc_size: int = 10_000, seed=0) -> FellerProbe:
    """Fit the small-time blow-up rate of ``sup ||D R_t phi||``.

    The default window is ``[1/a_d, 1/a_1]``, where the largest mode able to
    feel the noise sweeps through the spectrum. Observables default to
    :func:`sign_family`, evaluated at ``x = 0``.
    """
    d = params.basis.d
    a = params.a
    if window is None:
        if d < 2:
            raise ValueError("probe window [1/a_d, 1/a_1] is empty for d = 1; pass window explicitly")
        window = (1.0 / a[-1], 1.0 / a[0])
    t0, t1 = window
    if not 0 < t0 < t1:
        raise ValueError(f"empty probe window {window}")
    obs = sign_family(d) if observables is None else list(observables)
    pts = [np.zeros(d)] if points is None else [np.asarray(p, dtype=float) for p in points]
    times = np.geomspace(t0, t1, n_times)
    sup = np.empty(n_times)
    err = np.empty(n_times)
    for i, t in enumerate(times):
        best, best_se = -1.0, 0.0
        for j, phi in enumerate(obs):
            for x in pts:
                g, se = Rt_gradient(phi, t, x, params, mc_size, seed=[int(seed), i, j])
                val = float(np.linalg.norm(g)) / phi.sup
                if val > best:
                    best, best_se = val, float(np.linalg.norm(se)) / phi.sup
        sup[i], err[i] = best, best_se
    slope, intercept = np.polyfit(np.log(times), np.log(sup), 1)
    expo = 0.5 + delta
    C_R = float(np.max(times**expo * sup))
    return FellerProbe(times, sup, err, float(slope), float(intercept), C_R, expo)


# contraction constants -----------------------------------------------------------------


@dataclass(frozen=True)
class ContractionConstants:
    """Constants of the mild fixed point.

    ``drift_sup = k_A C_F + C_A' + k_A C_f`` bounds ``||b||_H``; with
    ``k_A = 1`` it is the familiar ``C_F + C_A' + C_f``.
    """

    C_R: float
    delta: float
    drift_sup: float
    alpha_0: float

    @property
    def gamma(self) -> float:
        return float(gamma(0.5 - self.delta))

    def ratio(self, alpha) -> np.ndarray:
        """Lipschitz constant of ``D S`` in ``D psi``."""
        return self.C_R * np.asarray(alpha, dtype=float) ** (-(0.5 - self.delta)) * self.gamma * self.drift_sup

    def grad_bound(self, alpha: float, g_sup: float) -> float:
        """``||D phi|| <= r_g ||g|| / (1 - ratio)`` with ``r_g = C_R Gamma alpha^{delta - 1/2}``."""
        r = float(self.ratio(alpha))
        if r >= 1:
            return math.inf
        r_g = self.C_R * alpha ** (-(0.5 - self.delta)) * self.gamma
        return r_g * g_sup / (1.0 - r)

    def sup_bound(self, alpha: float, g_sup: float) -> float:
        """``||phi|| <= (||g|| + drift_sup ||D phi||) / alpha``."""
        return (g_sup + self.drift_sup * self.grad_bound(alpha, g_sup)) / alpha

    def C1(self, alpha: float, g_sup: float) -> float:
        return self.sup_bound(alpha, g_sup) + self.grad_bound(alpha, g_sup)


def contraction_constants(cfg: DNLConfig, C_R_emp: float, constants: str = "conservative",
                          extra_thresholds=()) -> ContractionConstants:
    """Threshold ``alpha_0`` solving ``ratio(alpha_0) = 1``.

    ``constants="conservative"`` uses the conservative ``C_A'``; ``"tight"`` the
    sharp one. Additional thresholds (for instance from higher-order Feller
    bounds) can be supplied and the largest is kept.
    """
    if not C_R_emp > 0:
        raise ValueError("C_R_emp must be positive")
    CA = {"conservative": cfg.C_A_prime_conservative, "tight": cfg.C_A_prime_tight}[constants]
    drift_sup = cfg.k_A * cfg.C_F + CA + cfg.k_A * cfg.C_f
    beta = 0.5 - cfg.delta
    a0 = (C_R_emp * float(gamma(beta)) * drift_sup) ** (1.0 / beta)
    a0 = max([a0, *extra_thresholds])
    return ContractionConstants(float(C_R_emp), cfg.delta, float(drift_sup), float(a0))


# time quadrature -----------------------------------------------------------------------


def discount_weights(params: OUParams, delta: float):
    """Nodes ``t_j`` and weights for ``int_0^{T_max} e^{-alpha t} h(t) dt``.

    Gauss-Legendre in ``tau = t^{1/2 - delta}``; the Jacobian
    ``t^{1/2 + delta} / (1/2 - delta)`` cancels the strong Feller singularity.
    """
    beta = 0.5 - delta
    x, w = np.polynomial.legendre.leggauss(params.n_quad)
    tau_max = params.t_max**beta
    tau = 0.5 * tau_max * (x + 1.0)
    t = tau ** (1.0 / beta)
    jac = 0.5 * tau_max * w * (1.0 / beta) * tau ** (1.0 / beta - 1.0)
    return t, jac * np.exp(-params.alpha * t)


# Kolmogorov fixed point ----------------------------------------------------------------


class KolmogorovError(RuntimeError):
    """The fixed-point iteration could not be certified."""


class ContractionError(KolmogorovError):
    """Observed contraction ratio is at least one beyond the MC margin."""


class MCNoiseError(KolmogorovError):
    """Contraction ratio indistinguishable from one at the largest MC size."""


@dataclass
class KolmogorovSolution:
    """Mild solution on a design grid with interpolants for values and gradients."""

    design: np.ndarray  # (n_pts, d)
    values: np.ndarray  # (n_pts,)
    gradients: np.ndarray  # (n_pts, d)
    radius: float
    alpha: float
    yosida_lam: float
    trace: list  # sup C^1 differences per iteration
    ratios: np.ndarray
    ratio_emp: float
    ratio_margin: float
    mc_size: int
    verdict: str
    params: OUParams
    model: DNLConfig
    g: Observable
    drift: bool = True
    affine: dict = field(default_factory=dict, repr=False)
    _value_interp: RBFInterpolator | None = field(default=None, repr=False)
    _grad_interp: RBFInterpolator | None = field(default=None, repr=False)

    def __post_init__(self):
        self._value_interp = RBFInterpolator(self.design, self.values, kernel="thin_plate_spline")
        self._grad_interp = RBFInterpolator(self.design, self.gradients, kernel="thin_plate_spline")

    def _clip(self, x):
        return np.clip(x, -self.radius, self.radius)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self._value_interp(self._clip(x))

    def gradient(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self._grad_interp(self._clip(x))

    def value_at(self, x, mc_size: int = 20_000, seed=12345):
        """Mild evaluation ``S phi(x)`` with fresh samples.

        Returns the value and its standard error. Each pair of antithetic
        samples is followed across all time nodes, so the per-pair quadratures
        are i.i.d. and the standard error is exact for the MC part.
        """
        x = np.asarray(x, dtype=float)
        p = self.params
        t, w = discount_weights(p, self.model.delta)
        z = _pairs(mc_size, p.basis.d, _rng(seed))
        acc = np.zeros(z.shape[0])
        for tj, wj in zip(t, w):
            m = np.exp(-tj * p.a) * x
            s = np.sqrt(Qt_closed(tj, p))
            h = 0.0
            for y in (m + s * z, m - s * z):
                val = self.g(y)
                if self.drift:
                    val = val + np.sum(kolmogorov_drift(y, self.model, self.yosida_lam, p.basis) * self.gradient(y), axis=-1)
                h = h + 0.5 * val
            acc += wj * h
        return float(np.mean(acc)), float(np.std(acc, ddof=1) / math.sqrt(acc.size))

    @property
    def sup_value(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def sup_grad(self) -> float:
        return float(np.max(np.linalg.norm(self.gradients, axis=-1)))

    def hessian_surrogate(self, h: float | None = None) -> float:
        """Sup over design points of a central-difference Hessian norm of the gradient interpolant."""
        d = self.design.shape[1]
        h = 1e-3 * self.radius if h is None else h
        inner = self.design[np.all(np.abs(self.design) <= self.radius - h, axis=1)]
        best = 0.0
        for x in inner:
            H = np.empty((d, d))
            for k in range(d):
                e = np.zeros(d)
                e[k] = h
                H[:, k] = (self.gradient(x + e)[0] - self.gradient(x - e)[0]) / (2 * h)
            best = max(best, float(np.linalg.norm(H, 2)))
        return best


def kolmogorov_drift(y, model: DNLConfig, yosida_lam: float, basis: SpectralBasis) -> np.ndarray:
    """``b = k_A F + K_lam - k_A f_lam`` evaluated on states ``y``."""
    out = model.k_A * F_op(y, model, basis) + K_lambda_op(y, yosida_lam, model, basis)
    if model.f_gain:
        out = out - model.k_A * _nemytskii(lambda v: f_yosida_scalar(v, yosida_lam, model), y, basis)
    return out


def _design_grid(params: OUParams, points_per_axis: int):
    d = params.basis.d
    R = 3.0 * math.sqrt(float(np.max(params.Q_inf)))
    axis = np.linspace(-R, R, points_per_axis)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1), R


def _assemble(params, model, yosida_lam, g, design, radius, mc_size, seed, drift, workers):
    """Affine data of the discrete map ``Dpsi -> (values, gradients)``.

    Returns sums over two independent halves of the samples so that a
    split-half margin can be formed.
    """
    d = params.basis.d
    n = design.shape[0]
    t, w = discount_weights(params, model.delta)
    z = _pairs(mc_size, d, _rng(seed))
    halves = np.array_split(np.arange(z.shape[0]), 2)
    cardinal = RBFInterpolator(design, np.eye(n), kernel="thin_plate_spline") if drift else None

    def node(j):
        tj, wj = t[j], w[j]
        e = np.exp(-tj * params.a)
        s = np.sqrt(Qt_closed(tj, params))
        gs = wj * e / s  # gradient prefactor per mode
        m = design * e  # (n, d)
        out = []
        for idx in halves:
            zz = z[idx]
            P = zz.shape[0]
            yp = m[:, None, :] + s * zz[None]
            ym = m[:, None, :] - s * zz[None]
            gp, gm = g(yp), g(ym)
            c_val = wj * np.mean(0.5 * (gp + gm), axis=1)
            c_grad = gs * np.einsum("ip,pk->ik", 0.5 * (gp - gm), zz) / P
            if drift:
                bp = kolmogorov_drift(yp.reshape(-1, d), model, yosida_lam, params.basis)
                bm = kolmogorov_drift(ym.reshape(-1, d), model, yosida_lam, params.basis)
                Wp = cardinal(np.clip(yp.reshape(-1, d), -radius, radius)).reshape(n, P, n)
                Wm = cardinal(np.clip(ym.reshape(-1, d), -radius, radius)).reshape(n, P, n)
                bp = bp.reshape(n, P, d)
                bm = bm.reshape(n, P, d)
                # A_val[i, q, k] and A_grad[i, m, q, k]
                A_val = wj * 0.5 * (np.einsum("ipq,ipk->iqk", Wp, bp) + np.einsum("ipq,ipk->iqk", Wm, bm)) / P
                A_grad = 0.5 * (np.einsum("ipq,ipk,pm->imqk", Wp, bp, zz)
                                - np.einsum("ipq,ipk,pm->imqk", Wm, bm, zz)) / P
                A_grad *= gs[None, :, None, None]
            else:
                A_val = np.zeros((n, n, d))
                A_grad = np.zeros((n, d, n, d))
            out.append((c_val, c_grad, A_val, A_grad))
        return out

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(node, range(t.size)))
    else:
        parts = [node(j) for j in range(t.size)]
    halves_sum = []
    for h in range(2):
        acc = [sum(p[h][i] for p in parts) for i in range(4)]
        halves_sum.append(acc)
    return halves_sum


def _iterate(c_val, c_grad, A_val, A_grad, tol, max_iter):
    n, d = c_grad.shape
    Ag = A_grad.reshape(n * d, n * d)
    Av = A_val.reshape(n, n * d)
    cg = c_grad.ravel()
    G = np.zeros(n * d)
    V = np.zeros(n)
    trace = []
    for _ in range(max_iter):
        G_new = cg + Ag @ G
        V_new = c_val + Av @ G
        diff = float(np.max(np.abs(V_new - V)) + np.max(np.linalg.norm((G_new - G).reshape(n, d), axis=1)))
        trace.append(diff)
        G, V = G_new, V_new
        if diff < tol:
            break
    return V, G.reshape(n, d), trace


def _trace_ratio(trace, floor):
    r = [b / a for a, b in zip(trace[:-1], trace[1:]) if a > floor and b > floor]
    return np.asarray(r)


def _spectral_ratio(A_grad):
    n, d = A_grad.shape[:2]
    # sup-norm operator norm of the gradient map; this bounds every trace ratio
    M = A_grad.reshape(n, d, n * d)
    return float(np.max(np.sum(np.abs(M), axis=-1).max(axis=1)))


def kolmogorov_fixed_point(model: DNLConfig, g: Observable, params: OUParams, yosida_lam: float,
                           alpha_0: float | None = None, mc_size: int = 10_000, points_per_axis: int = 21,
                           tol: float = 1e-13, max_iter: int = 200, drift: bool = True, seed=0,
                           max_doublings: int = 3, workers=None) -> KolmogorovSolution:
    """Banach iteration of the mild map on a tensor design grid.

    Parameters
    ----------
    model : DNLConfig
    g : Observable
        Forcing term.
    params : OUParams
        Noise covariance, drift scale and discount ``alpha``; the state
        dimension ``d_K = params.basis.d`` must not exceed 3.
    yosida_lam : float
    alpha_0 : float, optional
        Contraction threshold; ``params.alpha`` must exceed it when given.
    drift : bool
        ``False`` switches ``b`` off, leaving the OU resolvent of ``g``.

    Raises
    ------
    ContractionError
        The empirical ratio is at least one beyond its MC margin.
    MCNoiseError
        The ratio stays within its margin of one after ``max_doublings``.
    """
    d = params.basis.d
    if d > 3:
        raise ValueError("d_K must be at most 3")
    if alpha_0 is not None and not params.alpha > alpha_0:
        raise ValueError(f"alpha={params.alpha} does not exceed alpha_0={alpha_0}")
    design, R = _design_grid(params, points_per_axis)
    mc = int(mc_size)
    for attempt in range(max_doublings + 1):
        h1, h2 = _assemble(params, model, yosida_lam, g, design, R, mc, seed, drift, workers)
        c_val, c_grad, A_val, A_grad = [0.5 * (a + b) for a, b in zip(h1, h2)]
        V, G, trace = _iterate(c_val, c_grad, A_val, A_grad, tol, max_iter)
        scale = max(trace[0], 1e-300)
        ratios = _trace_ratio(trace, 1e-9 * scale)
        r_op = _spectral_ratio(A_grad)
        r_emp = float(np.max(ratios)) if ratios.size else r_op
        margin = 0.5 * abs(_spectral_ratio(h1[3]) - _spectral_ratio(h2[3]))
        if abs(r_emp - 1.0) > margin or attempt == max_doublings:
            break
        mc *= 2
    if r_emp >= 1.0:
        if r_emp - margin < 1.0:
            raise MCNoiseError(f"ratio {r_emp:.4g} within MC margin {margin:.2g} of 1")
        raise ContractionError(f"observed ratio {r_emp:.4g} >= 1")
    verdict = "contraction" if r_emp + margin < 1.0 else "marginal"
    affine = {"c_val": c_val, "c_grad": c_grad, "A_val": A_val, "A_grad": A_grad, "operator_ratio": r_op}
    return KolmogorovSolution(design, V, G, R, params.alpha, yosida_lam, trace, ratios, r_emp, margin, mc,
                              verdict, params, model, g, drift, affine)


# identity check ------------------------------------------------------------------------


@dataclass
class IdentityReport:
    phi_value: float
    phi_se: float
    mc_value: float
    mc_se: float
    tail_bound: float
    overlap: bool

    def row(self) -> str:
        return (f"phi={self.phi_value:.8g}+-{1.96 * self.phi_se:.2g} "
                f"mc={self.mc_value:.8g}+-{1.96 * self.mc_se:.2g} overlap={self.overlap}")


def _exact_discount_weights(times, alpha):
    """Weights integrating ``e^{-alpha t}`` exactly against the piecewise linear interpolant."""
    w = np.zeros(times.size)
    for i in range(times.size - 1):
        t0, t1 = times[i], times[i + 1]
        h = t1 - t0
        x = alpha * h
        e0 = math.exp(-alpha * t0)
        # int_0^h e^{-alpha (t0+s)} (1 - s/h) ds and int ... (s/h) ds
        if x < 1e-8:
            i0, i1 = h / 2, h / 2
        else:
            em = -math.expm1(-x)
            i1 = (em - x * math.exp(-x)) / (alpha * x)
            i0 = em / alpha - i1
        w[i] += e0 * i0
        w[i + 1] += e0 * i1
    return w


def resolvent_identity_check(sol: KolmogorovSolution, ens, u0=None, phi_mc: int = 20_000) -> IdentityReport:
    """Compare ``phi(u0)`` with ``E int_0^inf e^{-alpha t} g(u(t)) dt`` from an ensemble."""
    cfg = ens.config
    if cfg.basis.d != sol.design.shape[1]:
        raise ValueError("ensemble dimension differs from d_K")
    if cfg.yosida_lam != sol.yosida_lam:
        raise ValueError("ensemble and solution use different yosida_lam")
    if not math.isinf(cfg.noise.n):
        raise ValueError("identity requires the unmollified noise G")
    if cfg.linear_part != "exact":
        raise ValueError("identity requires the hybrid dynamics (linear_part='exact')")
    u0 = np.asarray(cfg.u0 if u0 is None else u0, dtype=float)
    if not np.allclose(u0, cfg.u0):
        raise ValueError("u0 differs from the ensemble initial datum")
    w = _exact_discount_weights(ens.times, sol.alpha)
    per = sol.g(ens.states) @ w
    tail = (sol.g.sup if math.isfinite(sol.g.sup) else 0.0) * math.exp(-sol.alpha * ens.times[-1]) / sol.alpha
    m, se = float(np.mean(per)), float(np.std(per, ddof=1) / math.sqrt(per.size))
    pv, pse = sol.value_at(u0, phi_mc)
    overlap = abs(pv - m) <= 1.96 * (pse + se) + tail + sol.g.sup * sol.params.tail_tol / sol.alpha
    return IdentityReport(pv, pse, m, se, tail, bool(overlap))

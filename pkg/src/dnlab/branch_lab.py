"""Explicit non-unique solutions of the deterministic truncated equation.

Separated solutions ``u(t, x) = theta(t) v(x)`` of
``alpha(u_t) - u_xx = ell(u)`` with ``u(0) = 0`` come from a time profile
solving ``theta' = |theta|^{p'-2} theta`` (one solution per branching time
``t_star``) and a spatial profile minimizing

    I(v) = int 1/2 |v'|^2 + 1/p |v|^p - ell_gain/2 v^2 dx.

Everything here is evaluated in the spectral Galerkin subspace of a
``rho = 2`` basis; the ``|v|^p`` term uses the collocation quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .nonlinear_ops import DNLConfig, alpha, ell
from .spectral_core import SpectralBasis, analyze, norm_H, synthesize

__all__ = [
    "theta_star",
    "theta_star_dot",
    "theta_bound",
    "ode_residual",
    "energy_I",
    "grad_I",
    "MinimizerReport",
    "LineSearchError",
    "minimize_I",
    "elliptic_residual",
    "BranchSolution",
    "TruncationError",
    "assemble_branch",
    "pde_residual",
    "branch_separation",
    "trajectory_distance",
]


def _exponent(p: float) -> float:
    p_conj = p / (p - 1.0)
    return 1.0 / (2.0 - p_conj)


def _c_p(p: float) -> float:
    p_conj = p / (p - 1.0)
    return (2.0 - p_conj) ** _exponent(p)


def theta_star(t, t_star: float, p: float):
    """Time profile ``c_p ((t - t_star)^+)^{1/(2-p')}`` vanishing up to ``t_star``."""
    if not p > 2:
        raise ValueError(f"p must exceed 2, got {p}")
    s = np.maximum(np.asarray(t, dtype=float) - t_star, 0.0)
    return _c_p(p) * s ** _exponent(p)


def theta_star_dot(t, t_star: float, p: float):
    """Closed-form derivative of :func:`theta_star` (one-sided at ``t_star``)."""
    q = _exponent(p)
    s = np.maximum(np.asarray(t, dtype=float) - t_star, 0.0)
    return _c_p(p) * q * s ** (q - 1.0)


def theta_bound(T: float, p: float) -> float:
    """``M_1 = c_p T^{1/(2-p')}``, the sup of every profile on ``[0, T]``."""
    return _c_p(p) * T ** _exponent(p)


def ode_residual(times, t_star: float, p: float) -> float:
    """Sup of ``|theta' - |theta|^{p'-2} theta|`` over ``times``.

    Grid points within half a step of ``t_star`` are dropped.
    """
    times = np.asarray(times, dtype=float)
    dt = np.min(np.diff(times)) if times.size > 1 else 0.0
    t = times[np.abs(times - t_star) >= 0.5 * dt]
    th = theta_star(t, t_star, p)
    rhs = np.abs(th) ** (p / (p - 1.0) - 2.0 + 1.0) * np.sign(th)
    return float(np.max(np.abs(theta_star_dot(t, t_star, p) - rhs), initial=0.0))


# energy functional -------------------------------------------------------------


def energy_I(c, cfg: DNLConfig, basis: SpectralBasis) -> float:
    """Galerkin value of the functional ``I`` at coefficients ``c``."""
    c = np.asarray(c, dtype=float)
    v = synthesize(c, basis)
    quad = 0.5 * np.sum((basis.eigenvalues - cfg.ell_gain) * c**2)
    return float(quad + basis.h / cfg.p * np.sum(np.abs(v) ** cfg.p))


def grad_I(c, cfg: DNLConfig, basis: SpectralBasis) -> np.ndarray:
    """H-gradient of :func:`energy_I`: ``L c + P(|v|^{p-2} v) - ell_gain c``."""
    c = np.asarray(c, dtype=float)
    v = synthesize(c, basis)
    return (basis.eigenvalues - cfg.ell_gain) * c + analyze(np.abs(v) ** (cfg.p - 2.0) * v, basis)


def _energy_increment(c, direction, t, cfg, basis) -> float:
    """``I(c + t direction) - I(c)`` without catastrophic cancellation."""
    quad = t * np.sum((basis.eigenvalues - cfg.ell_gain) * direction * (c + 0.5 * t * direction))
    v = synthesize(c, basis)
    w = t * synthesize(direction, basis)
    vn = v + w
    same = (v != 0) & (np.sign(vn) == np.sign(v))
    ratio = np.where(same, w / np.where(v == 0, 1.0, v), 0.0)
    smooth = np.abs(v) ** cfg.p * np.expm1(cfg.p * np.log1p(ratio))
    raw = np.abs(vn) ** cfg.p - np.abs(v) ** cfg.p
    power = np.sum(np.where(same, smooth, raw))
    return float(quad + basis.h / cfg.p * power)


@dataclass
class MinimizerReport:
    I_value: float
    grad_norm: float
    iterations: int
    step_sizes: list = field(default_factory=list)
    I_history: list = field(default_factory=list)
    converged: bool = False


class LineSearchError(RuntimeError):
    """Backtracking could not find a descent step."""


def minimize_I(cfg: DNLConfig, basis: SpectralBasis, init=None, *, tol: float = 1e-8,
               max_iter: int = 100_000, armijo_c: float = 1e-4, shrink: float = 0.5,
               metric: str = "sobolev"):
    """Minimize the Galerkin functional by gradient descent with Armijo backtracking.

    Parameters
    ----------
    cfg : DNLConfig
    basis : SpectralBasis
        Must have ``rho = 2``.
    init : array_like, optional
        Starting coefficients. By default ``s e_1`` with ``s`` minimizing
        ``I`` along ``e_1``; when ``ell_gain <= lambda_1`` the functional is
        nonnegative with unique minimizer 0, which is returned directly.
    tol : float
        Exit threshold on the H-norm of the gradient.
    metric : {"sobolev", "H"}
        Inner product defining the descent direction. ``"sobolev"`` uses the
        H^1_0 gradient ``(I + L)^{-1} grad I``, which removes the stiffness of
        the high modes; ``"H"`` is the raw gradient.

    Returns
    -------
    v_star : ndarray
    report : MinimizerReport

    Raises
    ------
    LineSearchError
        If no step satisfies the Armijo condition.
    RuntimeError
        If the iteration cap is reached.
    """
    if basis.rho != 2:
        raise ValueError("minimize_I needs the Dirichlet Laplacian basis (rho = 2)")
    if metric not in ("sobolev", "H"):
        raise ValueError(f"unknown metric {metric!r}")
    lam1 = basis.eigenvalues[0]
    if init is None:
        if cfg.ell_gain <= lam1:
            return np.zeros(basis.d), MinimizerReport(0.0, 0.0, 0, converged=True)
        e1 = basis.eigenfunction_values(1)
        moment = basis.h * np.sum(np.abs(e1) ** cfg.p)
        s = ((cfg.ell_gain - lam1) / moment) ** (1.0 / (cfg.p - 2.0))
        init = s * basis.basis_vector(1)
    c = np.array(init, dtype=float)
    precond = 1.0 / (1.0 + basis.eigenvalues) if metric == "sobolev" else np.ones(basis.d)
    value = energy_I(c, cfg, basis)
    report = MinimizerReport(value, math.inf, 0, I_history=[value])
    step = 1.0 if metric == "sobolev" else 1.0 / (basis.eigenvalues[-1] + 1.0)
    for it in range(max_iter):
        g = grad_I(c, cfg, basis)
        gnorm = float(norm_H(g))
        report.grad_norm = gnorm
        report.iterations = it
        if gnorm < tol:
            report.converged = True
            break
        direction = -precond * g
        slope = float(np.dot(g, direction))
        t = min(2.0 * step, 1.0) if metric == "sobolev" else 2.0 * step
        while True:
            dI = _energy_increment(c, direction, t, cfg, basis)
            if dI <= armijo_c * t * slope and dI < 0:
                break
            t *= shrink
            if t < 1e-30:
                raise LineSearchError(f"no descent step at iteration {it}, |grad| = {gnorm:.3e}")
        c = c + t * direction
        value += dI
        step = t
        report.step_sizes.append(t)
        report.I_history.append(value)
    else:
        raise RuntimeError(f"iteration cap {max_iter} reached, |grad| = {report.grad_norm:.3e}")
    report.I_value = energy_I(c, cfg, basis)
    return c, report


def elliptic_residual(v, cfg: DNLConfig, basis: SpectralBasis) -> float:
    """``||L v + |v|^{p-2} v - ell_gain v||_H`` with the Nemytskii term projected."""
    return float(norm_H(grad_I(v, cfg, basis)))


# branch family -------------------------------------------------------------------


class TruncationError(ValueError):
    """The branch leaves the region where ``alpha`` and ``ell`` are untruncated."""


@dataclass(frozen=True)
class BranchSolution:
    t_star: float
    sign: int
    v_star: np.ndarray
    p: float
    T: float
    cfg: DNLConfig
    basis: SpectralBasis

    @property
    def M1(self) -> float:
        return theta_bound(self.T, self.p)

    @property
    def M2(self) -> float:
        return float(np.max(np.abs(synthesize(self.v_star, self.basis))))

    def theta(self, t):
        return self.sign * theta_star(t, self.t_star, self.p)

    def theta_dot(self, t):
        return self.sign * theta_star_dot(t, self.t_star, self.p)

    def coefficients(self, times) -> np.ndarray:
        """States ``u(t)`` at ``times``, shape ``(len(times), d)``."""
        return np.outer(self.theta(times), self.v_star)


def assemble_branch(t_star: float, sign: int, v_star, cfg: DNLConfig,
                    basis: SpectralBasis, T: float) -> BranchSolution:
    """Build ``u = sign * theta_star(t) v_star`` and check the truncation level.

    Raises
    ------
    TruncationError
        If ``M < M_1 M_2`` (or the rate exceeds ``M``) so that the truncated
        operators would be active on the branch.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if not 0 <= t_star <= T:
        raise ValueError(f"t_star must lie in [0, {T}]")
    b = BranchSolution(float(t_star), int(sign), np.asarray(v_star, dtype=float), cfg.p, float(T), cfg, basis)
    rate_max = float(theta_star_dot(T, 0.0, cfg.p)) * b.M2
    if b.M1 * b.M2 > cfg.M * (1 + 1e-12) or rate_max > cfg.M * (1 + 1e-12):
        raise TruncationError(
            f"M = {cfg.M} below M1*M2 = {b.M1 * b.M2:.6g} or rate bound {rate_max:.6g}")
    return b


def pde_residual(b: BranchSolution, times) -> float:
    """Sup over space-time of the Galerkin residual of ``alpha(u_t) - u_xx - ell(u)``.

    ``u_t`` is taken from the closed-form profile derivative; the Nemytskii
    terms are projected as everywhere else in the lab. Times within half a
    step of ``t_star`` are skipped (one-sided derivative only).
    """
    times = np.asarray(times, dtype=float)
    dt = np.min(np.diff(times)) if times.size > 1 else 0.0
    t = times[np.abs(times - b.t_star) >= 0.5 * dt]
    basis, cfg = b.basis, b.cfg
    v_grid = synthesize(b.v_star, basis)
    lap_v = basis.eigenvalues * b.v_star
    worst = 0.0
    for th, thd in zip(b.theta(t), b.theta_dot(t)):
        if np.max(np.abs(th * v_grid)) > cfg.M or np.max(np.abs(thd * v_grid)) > cfg.M:
            raise TruncationError("branch leaves the untruncated region")
        res = analyze(alpha(thd * v_grid, cfg), basis) + th * lap_v - analyze(ell(th * v_grid, cfg), basis)
        worst = max(worst, float(np.max(np.abs(synthesize(res, basis)))))
    return worst


def branch_separation(t_a: float, t_b: float, T: float, p: float, v_norm: float,
                      sign_a: int = 1, sign_b: int = 1) -> float:
    """Closed-form ``L^2(0, T; H)`` distance between two branches.

    ``||u_a - u_b|| = ||v_star||_H (int_0^T (s_a theta_a - s_b theta_b)^2 dt)^{1/2}``.
    Integer profile exponents are integrated exactly as polynomials; other
    exponents fall back to adaptive quadrature on each smooth piece.
    """
    q = _exponent(p)
    cp = _c_p(p)
    lo, hi = sorted((t_a, t_b))
    knots = [0.0, lo, hi, T]

    def diff(t):
        return sign_a * cp * max(t - t_a, 0.0) ** q - sign_b * cp * max(t - t_b, 0.0) ** q

    total = 0.0
    if abs(q - round(q)) < 1e-14:
        n = int(round(q))
        P = np.polynomial.Polynomial
        for left, right in zip(knots[:-1], knots[1:]):
            if right <= left:
                continue
            poly = P([0.0])
            if left >= t_a:
                poly = poly + sign_a * cp * P([-t_a, 1.0]) ** n
            if left >= t_b:
                poly = poly - sign_b * cp * P([-t_b, 1.0]) ** n
            anti = (poly * poly).integ()
            total += anti(right) - anti(left)
    else:
        for left, right in zip(knots[:-1], knots[1:]):
            if right > left:
                total += integrate.quad(lambda t: diff(t) ** 2, left, right, epsabs=0, epsrel=1e-13)[0]
    return float(v_norm * math.sqrt(max(total, 0.0)))


def trajectory_distance(states_a, states_b, times) -> float:
    """Trapezoid ``L^2(0, T; H)`` distance of two sampled trajectories."""
    diff2 = np.sum((np.asarray(states_a) - np.asarray(states_b)) ** 2, axis=-1)
    return float(math.sqrt(integrate.trapezoid(diff2, times)))

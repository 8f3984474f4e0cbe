"""Truncated power-law operator suite and the assumption validator.

The scalar maps ``alpha``, ``alpha_inv`` and ``ell`` are lifted to
coefficient space as Nemytskii operators: synthesize on the collocation grid,
apply pointwise, analyze back onto the retained modes.

Three quantities share the Greek letter lambda in the literature; here they
are ``ell_gain`` (forcing gain), ``yosida_lam`` (regularization parameter) and
``basis.eigenvalues`` (spectrum of ``L``).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .spectral_core import SpectralBasis, analyze, synthesize

__all__ = [
    "DNLConfig",
    "Check",
    "ValidationReport",
    "alpha",
    "alpha_inv",
    "ell",
    "f_scalar",
    "f_yosida_scalar",
    "F_op",
    "B_op",
    "yosida_B",
    "K_op",
    "K_lambda_op",
    "validate_config",
]


@dataclass(frozen=True)
class DNLConfig:
    """Model constants of the truncated doubly nonlinear example.

    Parameters
    ----------
    p : float
        Power of the dissipation, ``p > 2``.
    M : float
        Truncation level of ``alpha`` and ``ell``.
    ell_gain : float
        Slope of the forcing ``ell`` in its linear regime.
    delta : float
        Noise color exponent, the noise amplitudes are ``lambda_k**-delta``.
    rho : float
        Spectral growth exponent of ``L``.
    f_gain : float
        Amplitude of the optional bounded monotone perturbation
        ``f(x) = f_gain * tanh(x)``; zero disables it.
    """

    p: float = 3.0
    M: float = 2.0
    ell_gain: float = 11.0
    delta: float = 0.15
    rho: float = 4.0
    f_gain: float = 0.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not self.M > 0:
            raise ValueError(f"M must be positive, got {self.M}")
        if self.f_gain < 0:
            raise ValueError("f_gain must be nonnegative (f must be monotone)")

    @property
    def p_conj(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def k_A(self) -> float:
        return self.M ** (2.0 - self.p) / (self.p - 1.0)

    @property
    def s_A(self) -> float:
        """Holder exponent of ``alpha_inv``, ``p' - 1``."""
        return 1.0 / (self.p - 1.0)

    @property
    def C_A(self) -> float:
        """Linear growth constant, ``|alpha(x)| <= C_A (1 + |x|)``."""
        return (self.p - 1.0) * self.M ** (self.p - 2.0)

    @property
    def C_A_prime_conservative(self) -> float:
        """Coarse bound on ``sup |A^{-1}(v) - k_A v|`` over a unit-measure domain."""
        Mp = self.M ** (self.p - 1.0)
        inner = (self.M + self.k_A * Mp) ** 2
        outer = (self.k_A * (self.p - 2.0) * Mp) ** 2
        return math.sqrt(inner + outer)

    @property
    def C_A_prime_tight(self) -> float:
        """Exact scalar sup of ``|alpha_inv(v) - k_A v|``, attained at ``|v| = M**(p-1)``."""
        return self.M * (self.p - 2.0) / (self.p - 1.0)

    @property
    def F_sup(self) -> float:
        """Pointwise (hence H) bound of the forcing on a unit-measure domain."""
        return self.ell_gain * self.M

    @property
    def C_F(self) -> float:
        """Bounded-Lipschitz norm of ``F``: sup bound plus Lipschitz constant."""
        return self.ell_gain * (self.M + 1.0)

    @property
    def C_f(self) -> float:
        return self.f_gain

    def replace(self, **changes) -> "DNLConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DNLConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown DNLConfig fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DNLConfig":
        return cls.from_dict(json.loads(text))


# scalar maps ---------------------------------------------------------------


def alpha(x, cfg: DNLConfig):
    """Truncated power law: ``|x|^{p-2} x`` inside ``[-M, M]``, affine outside."""
    x = np.asarray(x, dtype=float)
    p, M = cfg.p, cfg.M
    ax = np.abs(x)
    inner = np.sign(x) * ax ** (p - 1.0)
    outer = (p - 1.0) * M ** (p - 2.0) * x - (p - 2.0) * M ** (p - 1.0) * np.sign(x)
    return np.where(ax <= M, inner, outer)


def alpha_inv(v, cfg: DNLConfig):
    """Inverse of :func:`alpha`; Holder continuous with exponent ``s_A``."""
    v = np.asarray(v, dtype=float)
    p, M = cfg.p, cfg.M
    Mp = M ** (p - 1.0)
    av = np.abs(v)
    inner = np.sign(v) * av ** (1.0 / (p - 1.0))
    outer = cfg.k_A * (v + (p - 2.0) * Mp * np.sign(v))
    return np.where(av <= Mp, inner, outer)


def ell(x, cfg: DNLConfig):
    """Forcing ``ell_gain * x`` clipped at ``ell_gain * M``."""
    x = np.asarray(x, dtype=float)
    return cfg.ell_gain * np.clip(x, -cfg.M, cfg.M)


def f_scalar(x, cfg: DNLConfig):
    """Bounded monotone perturbation of ``L``, ``f_gain * tanh(x)``."""
    return cfg.f_gain * np.tanh(np.asarray(x, dtype=float))


def f_yosida_scalar(x, yosida_lam: float, cfg: DNLConfig, iters: int = 64):
    """Yosida approximation ``(x - J(x)) / lam`` of :func:`f_scalar`.

    The resolvent ``J(x)`` solves ``y + lam f(y) = x``; the root lies in
    ``[x - lam C_f, x]`` for ``x >= 0`` (mirrored otherwise), so bisection is
    globally safe.
    """
    x = np.asarray(x, dtype=float)
    if cfg.f_gain == 0.0:
        return np.zeros_like(x)
    c = yosida_lam * cfg.f_gain
    lo = x - c
    hi = x + c
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        val = mid + c * np.tanh(mid) - x
        hi = np.where(val > 0, mid, hi)
        lo = np.where(val > 0, lo, mid)
    J = 0.5 * (lo + hi)
    return (x - J) / yosida_lam


# Nemytskii lifts -------------------------------------------------------------


def _nemytskii(fn, x, basis: SpectralBasis):
    return analyze(fn(synthesize(x, basis)), basis)


def F_op(x, cfg: DNLConfig, basis: SpectralBasis) -> np.ndarray:
    """Nemytskii lift of :func:`ell`; ``||F_op(x)||_H <= ell_gain * M``."""
    return _nemytskii(lambda u: ell(u, cfg), x, basis)


def B_op(x, cfg: DNLConfig, basis: SpectralBasis) -> np.ndarray:
    """Semilinear operator ``L x + f(x)``."""
    x = np.asarray(x, dtype=float)
    out = basis.eigenvalues * x
    if cfg.f_gain:
        out = out + _nemytskii(lambda u: f_scalar(u, cfg), x, basis)
    return out


def yosida_B(x, yosida_lam: float, cfg: DNLConfig, basis: SpectralBasis) -> np.ndarray:
    """Yosida-type regularization of ``B``.

    The linear part is the exact Yosida approximation, mode-wise
    ``lambda_k / (1 + yosida_lam lambda_k)``. When ``f_gain > 0`` the scalar
    Yosida approximation of ``f`` is added pointwise.
    """
    if not yosida_lam > 0:
        raise ValueError(f"yosida_lam must be positive, got {yosida_lam}")
    x = np.asarray(x, dtype=float)
    lam_k = basis.eigenvalues
    out = lam_k / (1.0 + yosida_lam * lam_k) * x
    if cfg.f_gain:
        out = out + _nemytskii(lambda u: f_yosida_scalar(u, yosida_lam, cfg), x, basis)
    return out


def _bounded_range_part(z, cfg: DNLConfig, basis: SpectralBasis) -> np.ndarray:
    # P[(A^{-1} - k_A)(S z)]; P[k_A S z] = k_A z because z is band-limited
    return _nemytskii(lambda v: alpha_inv(v, cfg) - cfg.k_A * v, z, basis)


def K_op(x, cfg: DNLConfig, basis: SpectralBasis) -> np.ndarray:
    """``A^{-1}(F(x) - B(x)) - k_A (F(x) - B(x))``, bounded by ``C_A'``."""
    z = F_op(x, cfg, basis) - B_op(x, cfg, basis)
    return _bounded_range_part(z, cfg, basis)


def K_lambda_op(x, yosida_lam: float, cfg: DNLConfig, basis: SpectralBasis) -> np.ndarray:
    """:func:`K_op` with ``B`` replaced by :func:`yosida_B`; same bound for every lam."""
    z = F_op(x, cfg, basis) - yosida_B(x, yosida_lam, cfg, basis)
    return _bounded_range_part(z, cfg, basis)


# validation ------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    margin: float
    severity: str  # "error", "precondition" or "warning"
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def ok(self) -> bool:
        """True when every error-severity assumption holds."""
        return all(c.passed for c in self.checks if c.severity == "error")

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self, severities=("error",)) -> list[Check]:
        return [c for c in self.checks if not c.passed and c.severity in severities]

    def table(self) -> str:
        rows = [f"{'check':<28} {'status':<6} {'margin':>12}  severity      detail"]
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            rows.append(f"{c.name:<28} {status:<6} {c.margin:>12.6g}  {c.severity:<12}  {c.detail}")
        return "\n".join(rows)


def validate_config(cfg: DNLConfig) -> ValidationReport:
    """Check every assumption of the model and return per-check margins."""
    lam1 = math.pi**cfg.rho
    checks = []

    def add(name, margin, severity, detail):
        checks.append(Check(name, bool(margin > 0), float(margin), severity, detail))

    add("dissipation.p_gt_2", cfg.p - 2.0, "error", "dissipation power p > 2")
    add("dissipation.s_A_in_(0,1)", min(cfg.s_A, 1.0 - cfg.s_A), "error", f"s_A = {cfg.s_A:.6g}")
    add("dissipation.k_A_positive", cfg.k_A, "error", f"k_A = M^(2-p)/(p-1) = {cfg.k_A:.6g}")
    add("dissipation.C_A_prime_finite", 1.0 if math.isfinite(cfg.C_A_prime_conservative) else -1.0, "error",
        f"C_A' = {cfg.C_A_prime_conservative:.6g} (tight {cfg.C_A_prime_tight:.6g})")
    add("operator.rho_positive", cfg.rho, "error", f"lambda_1 = pi^rho = {lam1:.6g}")
    add("forcing.ell_gain_positive", cfg.ell_gain, "error", f"C_F = {cfg.C_F:.6g}")
    add("noise.delta_in_(0,1/2)", min(cfg.delta, 0.5 - cfg.delta), "error", f"delta = {cfg.delta:.6g}")
    gap = cfg.s_A + 2.0 / (1.0 + 2.0 * cfg.delta) - 2.0
    add("noise.holder_gap", gap, "error", "s_A + 2/(1+2 delta) > 2")
    add("nonuniqueness.ell_gt_lam1", cfg.ell_gain - lam1, "precondition",
        f"ell_gain = {cfg.ell_gain:.6g} vs lambda_1 = {lam1:.6g}")
    add("noise.hilbert_schmidt_inf_dim", 2.0 * cfg.rho * cfg.delta - 1.0, "warning",
        "2 rho delta > 1; every finite truncation is Hilbert-Schmidt regardless")
    return ValidationReport(tuple(checks))

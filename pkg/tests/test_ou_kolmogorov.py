import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from dnlab.law_stability import observable_catalog
from dnlab.nonlinear_ops import DNLConfig
from dnlab.ou_kolmogorov import (ContractionError, Observable, OUParams, Qt_closed, Rt_apply, Rt_gradient,
                                 contraction_constants, discount_weights, feller_exponent_probe,
                                 kolmogorov_fixed_point, resolvent_identity_check)
from dnlab.spde_sim import NoiseSpec, SimConfig, simulate_ensemble
from dnlab.spectral_core import SpectralBasis

MODEL = DNLConfig()


def scalar(alpha=1.0, q=1.0, rho=2.0, **kw):
    return OUParams(SpectralBasis(1, rho), (q,), alpha, **kw)


def linear(k, name="x"):
    return Observable(f"{name}_{k}", lambda x, k=k: x[..., k], math.inf)


def const(c):
    return Observable("const", lambda x: np.full(x.shape[:-1], c), abs(c))


# covariance --------------------------------------------------------------------


def test_Qt_zero_time():
    np.testing.assert_array_equal(Qt_closed(0.0, scalar()), 0.0)


def test_Qt_scalar_example():
    val = Qt_closed(0.1, scalar())[0]
    assert val == pytest.approx((1 - math.exp(-0.2 * math.pi**2)) / (2 * math.pi**2), rel=1e-14)
    assert val == pytest.approx(0.04362, abs=1e-5)
    quad = integrate.quad(lambda s: math.exp(-2 * s * math.pi**2), 0, 0.1, epsabs=0, epsrel=1e-13)[0]
    assert val == pytest.approx(quad, rel=1e-8)


def test_Qt_large_time_limit():
    p = OUParams(SpectralBasis(4, 2.0), (1.0, 0.5, 0.2, 0.1))
    np.testing.assert_allclose(Qt_closed(50.0, p), p.Q_inf, rtol=1e-14)


@given(st.floats(0, 2), st.floats(0, 2))
def test_Qt_chapman_kolmogorov(t, s):
    p = OUParams(SpectralBasis(6, 2.0), tuple(np.linspace(1, 0.1, 6)))
    lhs = Qt_closed(t + s, p)
    rhs = np.exp(-2 * s * p.a) * Qt_closed(t, p) + Qt_closed(s, p)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-300)


@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
def test_Qt_increasing(t, s):
    p = OUParams(SpectralBasis(3, 4.0), (1.0, 1.0, 1.0))
    assert np.all(Qt_closed(t + s, p) >= Qt_closed(t, p))


def test_params_validation():
    with pytest.raises(ValueError):
        OUParams(SpectralBasis(2), (1.0, 0.0))
    with pytest.raises(ValueError):
        OUParams(SpectralBasis(2), (1.0,))
    with pytest.raises(ValueError):
        scalar(alpha=0.0)


# semigroup ---------------------------------------------------------------------


def test_Rt_constant_exact():
    v, r = Rt_apply(const(2.5), 0.3, [0.4], scalar(), 1000)
    assert v == 2.5 and r == 0.0


def test_Rt_linear_mean():
    p = OUParams(SpectralBasis(3, 2.0), (1.0, 0.5, 0.3))
    x = np.array([0.7, -0.2, 0.1])
    for k in range(3):
        v, _ = Rt_apply(linear(k), 0.05, x, p, 2000)
        # antithetic pairs cancel the centred Gaussian exactly
        assert v == pytest.approx(math.exp(-0.05 * p.a[k]) * x[k], rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_Rt_sf1(seed):
    phi = Observable("sign", lambda x: np.sign(x[..., 0]), 1.0)
    v, _ = Rt_apply(phi, 0.01, [0.05], scalar(), 500, seed)
    assert abs(v) <= 1.0


def test_Rt_small_time_limit():
    phi = Observable("cos", lambda x: np.cos(x[..., 0]), 1.0, 1.0)
    v, r = Rt_apply(phi, 1e-6, [0.3], scalar(), 2000)
    assert v == pytest.approx(math.cos(0.3), abs=r + 1e-5)


def test_Rt_chapman_kolmogorov():
    # quadratic observable has closed form R_t x^2 = (e^{-ta} x)^2 + Q_t
    p = scalar(q=0.8)
    sq = Observable("sq", lambda x: x[..., 0] ** 2, math.inf)
    x, t, s = 0.4, 0.03, 0.05
    inner = Observable("inner", lambda y: (np.exp(-s * p.a[0]) * y[..., 0]) ** 2 + Qt_closed(s, p)[0], math.inf)
    two_step, r2 = Rt_apply(inner, t, [x], p, 40_000, 1)
    one_step, r1 = Rt_apply(sq, t + s, [x], p, 40_000, 2)
    assert two_step == pytest.approx(one_step, abs=r1 + r2)


def test_gradient_of_constant_is_zero():
    g, se = Rt_gradient(const(1.0), 0.1, [0.2, 0.0], OUParams(SpectralBasis(2), (1.0, 1.0)), 2000)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


@pytest.mark.parametrize("t", [1e-3, 1e-2, 1e-1])
def test_sign_gradient_oracle(t):
    p = OUParams(SpectralBasis(2, 2.0), (1.0, 0.5))
    phi = Observable("sign", lambda x: np.sign(x[..., 0]), 1.0)
    g, se = Rt_gradient(phi, t, np.zeros(2), p, 40_000, seed=11)
    exact = math.sqrt(2 / math.pi) * math.exp(-t * p.a[0]) / math.sqrt(Qt_closed(t, p)[0])
    assert abs(g[0] - exact) <= 3 * se[0]
    assert abs(g[1]) <= 4 * se[1]


def test_gradient_finite_difference():
    p = OUParams(SpectralBasis(2, 2.0), (1.0, 0.5))
    phi = Observable("smooth", lambda x: np.tanh(x[..., 0] - 0.5 * x[..., 1]), 1.0, 1.5)
    x = np.array([0.1, -0.2])
    g, se = Rt_gradient(phi, 0.02, x, p, 100_000, seed=3)
    h = 1e-4
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        # common samples make the central difference nearly noise free
        up, ru = Rt_apply(phi, 0.02, x + e, p, 100_000, seed=4)
        dn, rd = Rt_apply(phi, 0.02, x - e, p, 100_000, seed=4)
        fd = (up - dn) / (2 * h)
        assert g[k] == pytest.approx(fd, abs=4 * se[k] + 1e-4)


def test_gradient_degenerate_covariance():
    with pytest.raises(FloatingPointError):
        Rt_gradient(const(1.0), 1e-320, [0.0], scalar(), 10)


# strong Feller probe -----------------------------------------------------------


def test_scalar_feller_slope_is_half():
    p = scalar(q=1.0)
    probe = feller_exponent_probe(p, 0.0, window=(1e-5, 1e-3), mc_size=20_000)
    assert probe.slope == pytest.approx(-0.5, abs=0.03)


def test_lipschitz_observable_slope_flat():
    p = scalar(q=1.0)
    phi = Observable("tanh", lambda x: np.tanh(x[..., 0]), 1.0, 1.0)
    probe = feller_exponent_probe(p, 0.0, observables=[phi], window=(1e-5, 1e-3), mc_size=20_000)
    assert abs(probe.slope) < 0.05
    assert np.all(probe.sup_grad <= 1.0 + 4 * probe.stderr)


def test_feller_window_needs_two_modes():
    with pytest.raises(ValueError):
        feller_exponent_probe(scalar(), 0.15)


def test_feller_bound_dominates_probe():
    p = OUParams.from_noise(SpectralBasis(4, 4.0), NoiseSpec(0.15), drift_scale=MODEL.k_A)
    probe = feller_exponent_probe(p, 0.15, n_times=5, mc_size=4000)
    assert np.all(probe.sup_grad <= probe.bound() * (1 + 1e-12))
    assert probe.C_R_emp > 0


# contraction constants ---------------------------------------------------------


def test_gamma_value():
    cc = contraction_constants(MODEL, 0.7)
    assert cc.gamma == pytest.approx(2.546, abs=5e-4)
    # recurrence Gamma(1.35) = 0.35 Gamma(0.35)
    assert cc.gamma == pytest.approx(math.gamma(1.35) / 0.35, rel=1e-14)


def test_ratio_at_threshold_is_one():
    for constants in ("conservative", "tight"):
        cc = contraction_constants(MODEL, 0.7, constants)
        assert float(cc.ratio(cc.alpha_0)) == pytest.approx(1.0, rel=1e-12)


@given(st.floats(1.0, 1e6), st.floats(1.0, 1e6))
def test_ratio_decreasing(a, b):
    cc = contraction_constants(MODEL, 0.7)
    if a < b:
        assert cc.ratio(a) > cc.ratio(b)


def test_drift_sup_composition():
    cc = contraction_constants(MODEL, 1.0, "conservative")
    assert cc.drift_sup == pytest.approx(0.25 * 33 + math.sqrt(10))
    tight = contraction_constants(MODEL, 1.0, "tight")
    assert tight.alpha_0 < cc.alpha_0


def test_bounds_algebra():
    cc = contraction_constants(MODEL, 0.7)
    alpha = 2 * cc.alpha_0
    r = float(cc.ratio(alpha))
    rg = 0.7 * alpha ** -0.35 * cc.gamma
    assert cc.grad_bound(alpha, 1.0) == pytest.approx(rg / (1 - r))
    assert cc.sup_bound(alpha, 1.0) == pytest.approx((1 + cc.drift_sup * rg / (1 - r)) / alpha)
    assert math.isinf(cc.grad_bound(0.5 * cc.alpha_0, 1.0))


def test_extra_threshold_kept():
    cc = contraction_constants(MODEL, 0.7, extra_thresholds=(1e9,))
    assert cc.alpha_0 == 1e9


# time quadrature ---------------------------------------------------------------


@pytest.mark.parametrize("delta", [0.0, 0.15, 0.3])
def test_discount_weights_integrate_singularity(delta):
    p = scalar(alpha=3.0)
    t, w = discount_weights(p, delta)
    # int_0^inf e^{-alpha t} t^{-(1/2 + delta)} dt = Gamma(1/2 - delta) alpha^{delta - 1/2}
    exact = special.gamma(0.5 - delta) * 3.0 ** (delta - 0.5)
    assert np.sum(w * t ** (-(0.5 + delta))) == pytest.approx(exact, rel=1e-7)
    assert np.sum(w) == pytest.approx(1 / 3.0, rel=1e-7)


# fixed point -------------------------------------------------------------------


def test_constant_forcing_exact():
    p = scalar(alpha=4.0, rho=4.0)
    sol = kolmogorov_fixed_point(MODEL, const(1.0), p, 0.05, drift=False, mc_size=200, points_per_axis=5)
    np.testing.assert_allclose(sol.values, (1 - p.tail_tol) / 4.0, rtol=1e-9)
    np.testing.assert_allclose(sol.gradients, 0.0, atol=1e-12)


@pytest.mark.parametrize("drift_scale", [1.0, MODEL.k_A])
def test_pure_ou_linear_resolvent(drift_scale):
    b = SpectralBasis(2, 2.0)
    p = OUParams(b, (1.0, 0.5), alpha=3.0, drift_scale=drift_scale)
    mc = 4000
    sol = kolmogorov_fixed_point(MODEL, linear(0), p, 0.05, drift=False, mc_size=mc, points_per_axis=7)
    exact = sol.design[:, 0] / (3.0 + drift_scale * b.eigenvalues[0])
    # antithetic pairs make the value exact up to the horizon tail
    np.testing.assert_allclose(sol.values, exact, rtol=1e-6, atol=1e-12)
    # the gradient estimator carries the sample mean of z^2 over mc/2 pairs
    np.testing.assert_allclose(sol.gradients[:, 0], 1 / (3.0 + drift_scale * b.eigenvalues[0]),
                               rtol=4 * math.sqrt(2 / (mc // 2)))


@pytest.fixture(scope="module")
def full_solution():
    b = SpectralBasis(1, 4.0)
    p = OUParams.from_noise(b, NoiseSpec(MODEL.delta), alpha=60.0, drift_scale=MODEL.k_A)
    g = next(o for o in observable_catalog(math.sqrt(p.Q_inf.max())) if o.name == "bump_0")
    return kolmogorov_fixed_point(MODEL, g, p, 0.05, mc_size=4000, points_per_axis=11, seed=5)


def test_full_model_trace_geometric(full_solution):
    sol = full_solution
    assert sol.verdict == "contraction"
    tr = np.asarray(sol.trace)
    assert tr[-1] < 1e-12 or tr[-1] < 1e-9 * tr[0]
    assert sol.ratio_emp + sol.ratio_margin < 1
    assert np.all(np.diff(np.log(tr[tr > 1e-9 * tr[0]])) < 0)


def test_full_model_bounds(full_solution):
    sol = full_solution
    assert sol.sup_value <= sol.g.sup / sol.alpha + sol.sup_grad * 10.0 / sol.alpha
    assert np.isfinite(sol.hessian_surrogate())


def test_full_model_value_at_matches_grid(full_solution):
    sol = full_solution
    x = sol.design[len(sol.design) // 2]
    v, se = sol.value_at(x, mc_size=4000)
    assert v == pytest.approx(float(sol(x)[0]), abs=4 * se + 1e-6 * sol.sup_value)


def test_lambda_cauchy():
    b = SpectralBasis(1, 4.0)
    p = OUParams.from_noise(b, NoiseSpec(MODEL.delta), alpha=20.0, drift_scale=MODEL.k_A)
    g = next(o for o in observable_catalog(math.sqrt(p.Q_inf.max())) if o.name == "bump_0")
    sols = [kolmogorov_fixed_point(MODEL, g, p, lam, mc_size=4000, points_per_axis=11, seed=3)
            for lam in (0.1, 0.05, 0.02)]
    d1 = np.max(np.abs(sols[0].values - sols[1].values))
    d2 = np.max(np.abs(sols[1].values - sols[2].values))
    assert d2 < d1


def test_fixed_point_rejects_large_dimension():
    p = OUParams(SpectralBasis(4), (1.0,) * 4)
    with pytest.raises(ValueError):
        kolmogorov_fixed_point(MODEL, const(1.0), p, 0.05)


def test_fixed_point_requires_alpha_above_threshold():
    with pytest.raises(ValueError):
        kolmogorov_fixed_point(MODEL, const(1.0), scalar(alpha=2.0), 0.05, alpha_0=5.0)


def test_divergent_iteration_reported():
    # strong drift with tiny discount: iteration cannot contract
    b = SpectralBasis(1, 4.0)
    p = OUParams.from_noise(b, NoiseSpec(MODEL.delta), alpha=1e-3, drift_scale=MODEL.k_A)
    g = next(o for o in observable_catalog(math.sqrt(p.Q_inf.max())) if o.name == "tanh_1")
    with pytest.raises(ContractionError):
        kolmogorov_fixed_point(MODEL.replace(ell_gain=200.0), g, p, 0.05, mc_size=500, points_per_axis=7,
                               max_doublings=0, max_iter=50)


# identity ----------------------------------------------------------------------


def test_identity_constant_forcing():
    b = SpectralBasis(1, 4.0)
    p = OUParams.from_noise(b, NoiseSpec(MODEL.delta), alpha=4.0, drift_scale=MODEL.k_A)
    sol = kolmogorov_fixed_point(MODEL, const(2.0), p, 0.05, drift=False, mc_size=200, points_per_axis=5)
    sim = SimConfig(MODEL, b, T=p.t_max, dt=p.t_max / 200, yosida_lam=0.05, noise=NoiseSpec(MODEL.delta),
                    ensemble_size=20, linear_part="exact", scheme="exponential")
    rep = resolvent_identity_check(sol, simulate_ensemble(sim), phi_mc=200)
    assert rep.phi_value == pytest.approx(0.5, rel=1e-7)
    assert rep.mc_value == pytest.approx(0.5, rel=1e-7)
    assert rep.overlap


def test_identity_preconditions():
    b = SpectralBasis(1, 4.0)
    p = OUParams.from_noise(b, NoiseSpec(MODEL.delta), alpha=4.0)
    sol = kolmogorov_fixed_point(MODEL, const(1.0), p, 0.05, drift=False, mc_size=100, points_per_axis=5)
    base = SimConfig(MODEL, b, T=1.0, dt=0.25, yosida_lam=0.05, noise=NoiseSpec(MODEL.delta),
                     ensemble_size=2, linear_part="exact")
    for bad in (base.replace(yosida_lam=0.1), base.replace(noise=NoiseSpec(MODEL.delta, 8)),
                base.replace(linear_part="yosida"), base.replace(basis=SpectralBasis(2, 4.0), u0=np.zeros(2))):
        with pytest.raises(ValueError):
            resolvent_identity_check(sol, simulate_ensemble(bad))

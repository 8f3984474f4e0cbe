import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dnlab.law_stability import (CATALOG_VERSION, FunctionalSet, deterministic_contrast, discounted_observable,
                                 energy_distance, law_distance, observable_catalog, rung_config,
                                 stability_experiment)
from dnlab.nonlinear_ops import DNLConfig
from dnlab.ou_kolmogorov import Observable
from dnlab.spde_sim import NoiseSpec, SimConfig, Trajectory, simulate_ensemble
from dnlab.spectral_core import SpectralBasis

MODEL = DNLConfig()
BASIS = SpectralBasis(8, 4.0)


def make(**kw):
    base = dict(model=MODEL, basis=BASIS, T=1.0, dt=1 / 64, yosida_lam=0.05, noise=NoiseSpec(MODEL.delta),
                seed=3, ensemble_size=200, save_every=2)
    base.update(kw)
    return SimConfig(**base)


ONE = Observable("one", lambda x: np.ones(x.shape[:-1]), 1.0)


# catalog -----------------------------------------------------------------------


def test_catalog_shape():
    cat = observable_catalog()
    assert len(cat) == 12
    assert len({g.name for g in cat}) == 12
    assert CATALOG_VERSION == FunctionalSet.default().version


@given(st.lists(st.floats(-1e3, 1e3), min_size=8, max_size=8))
def test_catalog_bounded(x):
    for g in observable_catalog(0.3):
        assert abs(float(g(np.array(x)))) <= g.sup


def test_catalog_low_dimension():
    x = np.array([[0.1]])
    for g in observable_catalog():
        assert np.isfinite(g(x)).all()


def test_catalog_lipschitz_constants():
    rng = np.random.default_rng(0)
    x = 0.2 * rng.standard_normal((4000, 4))
    y = x + 1e-6 * rng.standard_normal((4000, 4))
    dxy = np.linalg.norm(x - y, axis=-1)
    for g in observable_catalog(0.1):
        assert np.max(np.abs(g(x) - g(y)) / dxy) <= g.lipschitz * (1 + 1e-3)


def test_catalog_scale_positive():
    with pytest.raises(ValueError):
        observable_catalog(0.0)


# discounted functionals --------------------------------------------------------


def test_discount_of_one():
    t = np.linspace(0, 8, 801)
    tr = Trajectory(t, np.zeros((t.size, 3)))
    val, tail = discounted_observable(tr, ONE, 2.0)
    assert val == pytest.approx(-math.expm1(-16) / 2, rel=1e-4)
    assert tail == pytest.approx(math.exp(-16) / 2)
    assert tail < 1e-6


def test_discount_of_bump_on_zero_path():
    t = np.linspace(0, 3, 301)
    tr = Trajectory(t, np.zeros((t.size, 2)))
    bump = observable_catalog(0.5)[0]
    val, _ = discounted_observable(tr, bump, 1.5)
    assert val == pytest.approx(-math.expm1(-4.5) / 1.5, rel=1e-4)


def test_discount_horizon_cut():
    t = np.linspace(0, 4, 401)
    tr = Trajectory(t, np.zeros((t.size, 2)))
    val, tail = discounted_observable(tr, ONE, 2.0, T=2.0)
    assert val == pytest.approx(-math.expm1(-4) / 2, rel=1e-4)
    assert tail == pytest.approx(math.exp(-4) / 2)


def test_functional_set_tail_bound():
    assert FunctionalSet.default(alpha=2.0).tail_bound(8.0) == pytest.approx(math.exp(-16) / 2)


# distances ---------------------------------------------------------------------


def test_energy_distance_properties():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((300, 2))
    assert energy_distance(X, X) == pytest.approx(0.0, abs=1e-12)
    far = energy_distance(X, X + 3.0)
    near = energy_distance(X, X + 0.3)
    assert far > near > 0


@pytest.fixture(scope="module")
def pair():
    return simulate_ensemble(make()), simulate_ensemble(make(seed=4))


def test_identical_ensembles_zero(pair):
    a, _ = pair
    ld = law_distance(a, a, FunctionalSet.default(), n_boot=100)
    assert ld.value == 0.0 and ld.radius == 0.0
    assert ld.paired
    assert ld.energy == pytest.approx(0.0, abs=1e-12)


def test_independent_seeds_within_radius(pair):
    a, b = pair
    ld = law_distance(a, b, FunctionalSet.default(), n_boot=200)
    assert not ld.paired
    assert ld.value <= 2 * ld.radius
    assert ld.energy <= 2 * ld.energy_radius + 1e-12


def test_distance_detects_shifted_law(pair):
    a, _ = pair
    shifted = simulate_ensemble(make(u0=tuple(0.3 * BASIS.basis_vector(1))))
    ld = law_distance(a, shifted, FunctionalSet.default(), n_boot=200)
    assert ld.value > 3 * ld.radius


def test_distance_symmetric(pair):
    a, b = pair
    fs = FunctionalSet.default()
    assert law_distance(a, b, fs, n_boot=50).value == law_distance(b, a, fs, n_boot=50).value


def test_distance_requires_common_grid(pair):
    a, _ = pair
    other = simulate_ensemble(make(ensemble_size=4, save_every=4))
    with pytest.raises(ValueError):
        law_distance(a, other, FunctionalSet.default())


# ladder ------------------------------------------------------------------------


def test_rung_config():
    base = make(u0=tuple(np.ones(8)))
    rung = rung_config(base, 0.02, 16)
    assert rung.yosida_lam == 0.02 and rung.noise.n == 16
    assert np.all(np.abs(rung.u0) < 1.0)
    rung2 = rung_config(rung, 0.01, 32)
    assert rung2.noise.n == 32


def test_single_rung_trivial_pass():
    rep = stability_experiment(make(ensemble_size=20), [(0.05, 8)], n_boot=50)
    assert rep.cauchy
    assert rep.consecutive == []
    assert rep.tightness["uniform"]


def test_ladder_must_decrease():
    with pytest.raises(ValueError):
        stability_experiment(make(ensemble_size=4), [(0.01, 4), (0.05, 8)])


def test_ladder_report_structure():
    ladder = [(0.1, 4), (0.05, 8), (0.02, 16)]
    rep = stability_experiment(make(ensemble_size=100), ladder, n_boot=100)
    assert rep.distance.shape == (3, 3)
    np.testing.assert_array_equal(np.diag(rep.distance), 0.0)
    np.testing.assert_allclose(rep.distance, rep.distance.T)
    assert len(rep.consecutive) == 2
    assert rep.means.shape == (3, 12)
    assert rep.tightness["uniform"]
    assert "cauchy=" in rep.summary()


# contrast ----------------------------------------------------------------------


def test_contrast_eps_zero_identical():
    basis = SpectralBasis(8, 2.0)
    base = SimConfig(MODEL.replace(rho=2.0), basis, T=0.5, dt=1 / 256, yosida_lam=0.01,
                     noise=NoiseSpec(MODEL.delta))
    rep = deterministic_contrast(base, basis.basis_vector(1), eps=0.0)
    assert rep.separation == 0.0
    assert not rep.deterministic_splits


def test_contrast_branch_split():
    from dnlab.branch_lab import minimize_I
    model = MODEL.replace(rho=2.0)
    basis = SpectralBasis(16, 2.0)
    v, _ = minimize_I(model, basis)
    base = SimConfig(model, basis, T=2.0, dt=1 / 512, yosida_lam=0.01, noise=NoiseSpec(MODEL.delta),
                     save_every=4)
    rep = deterministic_contrast(base, v, eps=1e-3)
    assert rep.deterministic_splits
    assert rep.separation >= 0.5 * rep.branch_separation


def test_ladder_decreases_once_mollifier_resolved():
    # for n well above lambda_1 = pi^4 the mollified noise has converged, so only
    # the Yosida steps remain and the gaps shrink; below it G_n ~ (n / lambda_k) G
    ladder = [(0.1, 400), (0.05, 800), (0.02, 1600), (0.01, 3200)]
    rep = stability_experiment(make(T=2.0, dt=1 / 128, seed=5, save_every=4), ladder, n_boot=200, seed=5)
    assert rep.cauchy
    assert rep.tightness["uniform"]

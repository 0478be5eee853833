import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bingham_control import FluidModel, Grid, TensorField, ViscosityModel, YieldField
from bingham_control.fields import second_invariant
from bingham_control.rheology import (effective_viscosity, monotonicity_check, plug_half_width, poiseuille_oracle,
                                      rigid_mask, simple_shear_to_tensor, stress_deviator)
from bingham_control.verification import random_symmetric

from conftest import shear_profile_quadrature

GRID = Grid((1.0, 1.0), (4, 4), ("periodic", "wall"))


def model(mu=1.0, g=1.0, eps=1e-6):
    return FluidModel.bingham(GRID, mu, g, eps)


def tensor(entries, grid=GRID):
    data = np.zeros((len(grid.components), grid.n_sub) + grid.shape)
    for key, val in entries.items():
        data[grid.components.index(key)] = val
    return TensorField(grid, data)


# -- viscosity models ------------------------------------------------------------------------


@pytest.mark.parametrize("visc", [ViscosityModel.constant(2.0), ViscosityModel.arctan(1.0, 0.5, 2.0),
                                  ViscosityModel.tabulated([0, 1, 5], [1.0, 1.5, 3.0])])
def test_viscosity_within_bounds(visc):
    s = np.concatenate([np.linspace(0, 10, 501), np.geomspace(10, 1e8, 101)])
    m = visc(s)
    assert np.all(m >= visc.mu0) and np.all(m <= visc.mu1)
    assert visc.mu0 > 0


@pytest.mark.parametrize("make, match", [
    (lambda: ViscosityModel.constant(0.0), "bounds"),
    (lambda: ViscosityModel.constant(-1.0), "bounds"),
    (lambda: ViscosityModel.arctan(1.0, -1.0), "scale"),
    (lambda: ViscosityModel.tabulated([0, 1, 2], [2.0, 1.0, 3.0]), "nondecreasing"),
    (lambda: ViscosityModel.tabulated([0, 2, 1], [1.0, 2.0, 3.0]), "increasing"),
    (lambda: ViscosityModel("cubic"), "unknown"),
])
def test_viscosity_validation(make, match):
    with pytest.raises(ValueError, match=match):
        make()


def test_viscosity_derivative_matches_finite_difference():
    visc = ViscosityModel.arctan(1.0, 0.7, 1.5)
    s = np.linspace(0.1, 5.0, 20)
    fd = (visc(s + 1e-6) - visc(s - 1e-6)) / 2e-6
    np.testing.assert_allclose(visc.derivative(s), fd, rtol=1e-7)


@pytest.mark.parametrize("values, match", [(-0.1, "nonnegative"), (np.nan, "finite")])
def test_yield_field_validation(values, match):
    with pytest.raises(ValueError, match=match):
        YieldField(GRID, values)


def test_yield_field_strict_and_blocks():
    with pytest.raises(ValueError, match="strictly positive"):
        YieldField.constant(GRID, 0.0, strict=True)
    y = YieldField.blocks(GRID, 1.0, [((0.0, 0.0), (0.5, 0.5), 3.0)])
    assert set(np.unique(y.values)) == {1.0, 3.0}
    assert YieldField.constant(GRID, 2.0).l2_norm() == pytest.approx(2.0)


def test_regularization_must_be_positive():
    with pytest.raises(ValueError, match="eps"):
        model(eps=0.0)


# -- effective viscosity and stress -------------------------------------------------------------


def test_effective_viscosity_examples():
    m = model()
    assert effective_viscosity(m, 0.0, 1.0) == pytest.approx(1.0 + 1e6, rel=1e-15)
    s = np.linspace(0, 10, 11)
    assert np.array_equal(effective_viscosity(m, s, 0.0), np.ones_like(s))
    assert effective_viscosity(m, 1.0, 1.0) == pytest.approx(1 + 1 / np.sqrt(1 + 1e-12), rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(s=st.floats(0, 1e6), g=st.floats(0, 100), eps=st.floats(1e-9, 1.0))
def test_effective_viscosity_above_mu0(s, g, eps):
    visc = ViscosityModel.arctan(1.0, 0.5)
    m = FluidModel(visc, YieldField.constant(GRID, g), eps)
    mu_eff = effective_viscosity(m, s, g)
    assert mu_eff >= visc.mu0
    mu = mu_eff - g / np.sqrt(s ** 2 + eps ** 2)
    assert visc.mu0 - 1e-12 * mu_eff <= mu <= visc.mu1 + 1e-12 * mu_eff


def test_effective_viscosity_limit():
    s = 0.3
    vals = [effective_viscosity(model(eps=e), s, 1.0) for e in (1e-2, 1e-4, 1e-6)]
    assert abs(vals[-1] - (1 + 1 / s)) < 1e-10
    assert np.all(np.diff(np.abs(np.array(vals) - (1 + 1 / s))) < 0)


def test_stress_examples():
    m = model()
    assert np.all(stress_deviator(m, tensor({})).data == 0.0)
    E = tensor({(0, 1): 0.5})
    sig = second_invariant(stress_deviator(m, E))
    np.testing.assert_allclose(sig, 1 / np.sqrt(2) + 1, atol=1e-4)
    newt = model(mu=3.0, g=0.0)
    assert np.array_equal(stress_deviator(newt, E).data, 3.0 * E.data)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), g=st.floats(0, 10))
def test_stress_odd_and_bounded(seed, g):
    rng = np.random.default_rng(seed)
    E = TensorField(GRID, rng.uniform(-5, 5, (3, GRID.n_sub) + GRID.shape))
    m = FluidModel(ViscosityModel.arctan(1.0), YieldField.constant(GRID, g), 1e-6)
    sig = stress_deviator(m, E)
    assert np.array_equal(stress_deviator(m, TensorField(GRID, -E.data)).data, -sig.data)
    s = second_invariant(E)
    assert np.all(second_invariant(sig) <= m.viscosity(s) * s + g + 1e-12 * (1 + s))


def test_rigid_mask_threshold():
    m = model(eps=1e-6)
    E = tensor({(0, 1): 5e-6})  # |E| = 7.07e-6 < 10 eps
    assert np.all(rigid_mask(m, E))
    assert not np.any(rigid_mask(m, tensor({(0, 1): 1e-4})))


def test_simple_shear_to_tensor():
    # for E12 = E21 = du/dy / 2 the tensor law gives
    # sigma12 = mu/2 du/dy + g/sqrt(2) for du/dy > 0
    mu, g = simple_shear_to_tensor(0.7, 0.3)
    rate = 2.0
    E = tensor({(0, 1): rate / 2})
    sig = stress_deviator(FluidModel.bingham(GRID, mu, g, 1e-12), E).component(0, 1)
    np.testing.assert_allclose(sig, 0.7 * rate + 0.3, rtol=1e-12)


# -- monotonicity --------------------------------------------------------------------------------


def test_monotonicity_examples(rng):
    X = random_symmetric(rng, 50)
    assert np.all(monotonicity_check(ViscosityModel.arctan(1.0), X, X) == 0.0)
    Y = random_symmetric(rng, 50)
    np.testing.assert_allclose(monotonicity_check(ViscosityModel.constant(1.0), X, Y),
                               np.sum((X - Y) ** 2, axis=(1, 2)), rtol=1e-13)


@pytest.mark.parametrize("visc", [ViscosityModel.arctan(1.0), ViscosityModel.arctan(0.1, 5.0, 0.1),
                                  ViscosityModel.tabulated([0, 1, 2, 10], [1, 1, 4, 5])])
@pytest.mark.parametrize("dim", [2, 3])
def test_monotonicity_sweep(visc, dim):
    rng = np.random.default_rng(dim)
    X, Y = random_symmetric(rng, 1000, dim), random_symmetric(rng, 1000, dim)
    scale = np.maximum(np.sum(X ** 2, axis=(1, 2)), np.sum(Y ** 2, axis=(1, 2)))
    assert np.all(monotonicity_check(visc, X, Y) >= -1e-12 * scale)


# -- channel oracle ---------------------------------------------------------------------------------


@pytest.mark.parametrize("g, G, y, expected", [
    (0.0, 1.0, 0.0, 0.5),
    (0.25, 1.0, 0.0, 0.28125),
    (0.25, 1.0, 0.1, 0.28125),
    (1.0, 0.5, 0.3, 0.0),
])
def test_oracle_examples(g, G, y, expected):
    assert poiseuille_oracle(g, 1.0, G, 1.0, y) == pytest.approx(expected, abs=1e-15)


def test_oracle_blocked_everywhere():
    y = np.linspace(-1, 1, 41)
    assert np.all(poiseuille_oracle(1.0, 1.0, 0.5, 1.0, y) == 0.0)
    assert plug_half_width(1.0, 0.5, 1.0) == 1.0


@settings(max_examples=40, deadline=None)
@given(g=st.floats(0, 2), mu=st.floats(0.1, 5), G=st.floats(0.1, 5), t=st.floats(-1, 1))
def test_oracle_matches_quadrature(g, mu, G, t):
    h = 1.0
    assert poiseuille_oracle(g, mu, G, h, t * h) == pytest.approx(
        shear_profile_quadrature(g, mu, G, h, t * h), abs=1e-12)


@pytest.mark.parametrize("g, G", [(0.25, 1.0), (0.5, 2.0), (0.1, 0.3)])
def test_oracle_continuous_at_plug_edge(g, G):
    y0 = g / G
    inner = G / 2 * (1 - y0) ** 2
    outer = G * (1 - y0 ** 2) / 2 - g * (1 - y0)
    assert abs(inner - outer) <= 1e-14
    assert abs(poiseuille_oracle(g, 1.0, G, 1.0, y0) - poiseuille_oracle(g, 1.0, G, 1.0, y0 * (1 + 1e-12))) < 1e-12


def test_oracle_continuous_at_blocking_threshold():
    vals = [poiseuille_oracle(0.5 - d, 1.0, 0.5, 1.0, 0.0) for d in (1e-2, 1e-4, 1e-6)]
    assert vals[-1] < 1e-11 and np.all(np.diff(vals) < 0)
    assert poiseuille_oracle(0.5, 1.0, 0.5, 1.0, 0.0) == 0.0


@pytest.mark.parametrize("args", [(-0.1, 1, 1, 1, 0), (0, 0, 1, 1, 0), (0, 1, 0, 1, 0), (0, 1, 1, 1, 1.5)])
def test_oracle_domain_errors(args):
    with pytest.raises(ValueError):
        poiseuille_oracle(*args)

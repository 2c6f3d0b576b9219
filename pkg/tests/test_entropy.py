"""Tests for the Tsallis entropy family and its policy integrals."""

import numpy as np
import pytest

from tsq.entropy import EntropyParams, tsallis, tsallis_deriv
from tsq.policy import entropy_integral, make_normalized, QGaussian2D


def test_tsallis_point_values():
    assert tsallis(EntropyParams(2, 1.0), 1.0) == 0.0
    assert tsallis(EntropyParams(1, 1.0), np.exp(-1.0)) == pytest.approx(1.0, abs=1e-14)
    assert tsallis(EntropyParams(3, 1.0), 2.0) == pytest.approx(-1.5, abs=1e-14)


def test_tsallis_deriv_point_values():
    assert tsallis_deriv(EntropyParams(2, 1.0), 0.7) == pytest.approx(-1.0, abs=1e-14)
    assert tsallis_deriv(EntropyParams(1, 1.0), 2.0) == pytest.approx(-0.5, abs=1e-14)
    assert tsallis_deriv(EntropyParams(3, 1.0), 0.5) == pytest.approx(-0.5, abs=1e-14)


def test_tsallis_vectorized_matches_scalar():
    params = EntropyParams(2.5, 0.3)
    z = np.array([0.2, 1.0, 3.7])
    vec = tsallis(params, z)
    assert vec.shape == (3,)
    for zi, vi in zip(z, vec):
        assert tsallis(params, zi) == pytest.approx(vi, rel=1e-15)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 5.0])
def test_tsallis_strictly_decreasing_and_zero_at_one(p):
    params = EntropyParams(p, 1.0)
    z = np.linspace(0.05, 10.0, 200)
    vals = tsallis(params, z)
    assert np.all(np.diff(vals) < 0.0)
    assert tsallis(params, 1.0) == 0.0


def test_shannon_limit_first_order():
    eps = 1e-4
    near = EntropyParams(1.0 + eps, 1.0)
    exact = EntropyParams(1.0, 1.0)
    for z in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0]:
        gap = abs(tsallis(near, z) - tsallis(exact, z))
        assert gap <= 5.0 * eps * (1.0 + np.log(z) ** 2)


def test_p_snap_to_shannon():
    params = EntropyParams(1.0 + 1e-9, 0.5)
    assert params.p == 1.0
    assert params.shannon
    # just outside the snap window stays on the power branch
    assert EntropyParams(1.0 + 1e-7, 0.5).p == 1.0 + 1e-7


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
def test_domain_errors(bad):
    params = EntropyParams(2.0, 1.0)
    with pytest.raises(ValueError):
        tsallis(params, bad)
    with pytest.raises(ValueError):
        tsallis_deriv(params, bad)


def test_params_validation():
    with pytest.raises(ValueError):
        EntropyParams(0.9, 1.0)
    with pytest.raises(ValueError):
        EntropyParams(2.0, 0.0)
    with pytest.raises(ValueError):
        EntropyParams(2.0, -0.1)


# -- entropy integrals of policies --------------------------------------

# Level of the p=2, gamma=1 q-Gaussian with curvatures (1, 0.8856205):
# 2*(a1*a2)**0.25/sqrt(pi), oracle-checked by quadrature root find.
LEVEL_DP_FIGURE = 1.0946290625419799


def test_entropy_integral_closed_form_values():
    params = EntropyParams(2, 1.0)
    pol = make_normalized(params, (0.0, 0.0), (1.0, 0.8856205))
    assert pol.level == pytest.approx(LEVEL_DP_FIGURE, abs=1e-12)
    val = entropy_integral(params, pol)
    assert val == pytest.approx(1.0 - LEVEL_DP_FIGURE / 3.0, abs=1e-12)
    assert val == pytest.approx(0.63512364581934, abs=1e-10)

    unit = make_normalized(params, (0.0, 0.0), (1.0, 1.0))
    assert unit.level == pytest.approx(2.0 / np.sqrt(np.pi), abs=1e-14)
    assert entropy_integral(params, unit) == pytest.approx(
        1.0 - 2.0 / np.sqrt(np.pi) / 3.0, abs=1e-12
    )


def test_entropy_integral_algebraic_zero():
    # level gamma*(2p-1)/(p-1) makes the closed form vanish; pick the
    # curvature that realizes that level for a normalized policy
    p, gamma = 2.5, 0.7
    params = EntropyParams(p, gamma)
    a = np.pi * gamma * ((2.0 * p - 1.0) / p) ** (p / (p - 1.0))
    pol = make_normalized(params, (0.4, -1.0), (a, a))
    assert pol.level == pytest.approx(gamma * (2.0 * p - 1.0) / (p - 1.0), rel=1e-12)
    assert entropy_integral(params, pol) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 5.0])
def test_entropy_integral_matches_quadrature(p):
    # direct quadrature of l_p(pi)*pi, independent of the closed form
    rng = np.random.default_rng(17)
    for _ in range(5):
        params = EntropyParams(p, float(rng.uniform(0.05, 2.0)))
        center = tuple(rng.uniform(-2.0, 2.0, size=2))
        curv = tuple(rng.uniform(0.2, 4.0, size=2))
        pol = make_normalized(params, center, curv)
        direct = pol.expectation(lambda u: tsallis(params, pol.density(u)))
        assert entropy_integral(params, pol) == pytest.approx(direct, abs=1e-6)


def test_entropy_integral_shannon_matches_gaussian_entropy():
    params = EntropyParams(1, 0.8)
    pol = make_normalized(params, (1.0, -2.0), (0.7, 2.3))
    analytic = 1.0 + np.log(np.pi * params.gamma / np.sqrt(0.7 * 2.3))
    assert entropy_integral(params, pol) == pytest.approx(analytic, abs=1e-10)


def test_entropy_integral_contract_violations():
    params = EntropyParams(2, 1.0)
    pol = make_normalized(params, (0.0, 0.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        entropy_integral(EntropyParams(3, 1.0), pol)
    crooked = QGaussian2D(params, (0.0, 0.0), (1.0, 1.0), level=2.0)
    with pytest.raises(ValueError):
        entropy_integral(params, crooked)

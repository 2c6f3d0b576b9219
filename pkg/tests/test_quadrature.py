"""Quadrature rule correctness against analytic integrals and scipy."""

import numpy as np
import pytest
from scipy.integrate import dblquad

from tsq.quadrature import (
    box_rule,
    ellipse_jacobi_rule,
    gauss_legendre,
    gaussian_rule,
    integrate_box,
    star_jacobi_rule,
)


def test_gauss_legendre_polynomial_exactness():
    x, w = gauss_legendre(8, 0.0, 1.0)
    for k in range(16):
        assert w @ x**k == pytest.approx(1.0 / (k + 1), rel=1e-13)


def test_box_rule_polynomials():
    box = ((-1.0, 2.0), (0.5, 3.0))
    rule = box_rule(box, n=12)

    def f(u):
        return u[:, 0] ** 3 * u[:, 1] ** 2 + 2.0 * u[:, 1]

    exact = (2.0**4 - 1.0) / 4.0 * (3.0**3 - 0.5**3) / 3.0 + 2.0 * 3.0 * (
        3.0**2 - 0.5**2
    ) / 2.0
    assert rule.integrate(f) == pytest.approx(exact, rel=1e-13)


def test_integrate_box_smooth():
    val = integrate_box(
        lambda u: np.exp(-(u[:, 0] ** 2) - u[:, 1] ** 2),
        ((-6.0, 6.0), (-6.0, 6.0)),
        n=64,
    )
    assert val == pytest.approx(np.pi, rel=1e-12)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0, 2.0])
def test_ellipse_jacobi_constant(alpha):
    # integral over the ellipse of (1-s)^alpha equals se1*se2*pi/(alpha+1)
    rule = ellipse_jacobi_rule((0.7, -0.3), (1.5, 0.4), alpha)
    assert rule.weights.sum() == pytest.approx(
        1.5 * 0.4 * np.pi / (alpha + 1.0), rel=1e-13
    )


def test_ellipse_jacobi_vs_dblquad():
    # nontrivial smooth factor against adaptive quadrature
    center, semi = (0.2, 0.1), (1.2, 0.8)
    alpha = 0.5

    def s_of(u1, u2):
        return ((u1 - center[0]) / semi[0]) ** 2 + ((u2 - center[1]) / semi[1]) ** 2

    def integrand(u2, u1):
        s = s_of(u1, u2)
        return np.where(s < 1.0, np.maximum(1.0 - s, 0.0) ** alpha * np.cos(u1 + u2), 0.0)

    ref, err = dblquad(
        integrand,
        center[0] - semi[0],
        center[0] + semi[0],
        lambda u1: center[1] - semi[1],
        lambda u1: center[1] + semi[1],
        epsabs=1e-11,
    )
    rule = ellipse_jacobi_rule(center, semi, alpha)
    val = rule.integrate(lambda u: np.cos(u[:, 0] + u[:, 1]))
    assert val == pytest.approx(ref, abs=max(5e-10, 5 * err))


def test_star_rule_constant_radius_area():
    radii = np.full(64, 1.3)
    rule = star_jacobi_rule((0.4, 0.4), radii, alpha=0.0)
    assert rule.weights.sum() == pytest.approx(np.pi * 1.3**2, rel=1e-12)


def test_star_rule_matches_ellipse_rule_on_quadratic():
    # integrate (level - Q(u))^alpha over its support both ways
    level, a1, a2 = 1.7, 0.9, 2.1
    center = (0.25, -0.6)
    alpha = 0.5
    n_ang = 128
    phi = 2.0 * np.pi * np.arange(n_ang) / n_ang
    radii = np.sqrt(level / (a1 * np.cos(phi) ** 2 + a2 * np.sin(phi) ** 2))
    star = star_jacobi_rule(center, radii, alpha)

    def g_over_weight(pts, one_minus_x):
        d1 = pts[:, 0] - center[0]
        d2 = pts[:, 1] - center[1]
        g = level - a1 * d1**2 - a2 * d2**2
        return (np.maximum(g, 0.0) / (level * one_minus_x)) ** alpha * level**alpha

    val_star = star.weights @ g_over_weight(star.points, star.one_minus_x)
    semi = (np.sqrt(level / a1), np.sqrt(level / a2))
    ell = ellipse_jacobi_rule(center, semi, alpha)
    val_ell = level**alpha * ell.weights.sum()
    analytic = semi[0] * semi[1] * np.pi / (alpha + 1.0) * level**alpha
    assert val_ell == pytest.approx(analytic, rel=1e-12)
    assert val_star == pytest.approx(analytic, rel=1e-9)


def test_gaussian_rule_moments():
    rule = gaussian_rule((1.0, -2.0), (0.5, 1.5), n=40)
    assert rule.weights.sum() == pytest.approx(1.0, rel=1e-12)
    m1 = rule.integrate(lambda u: u[:, 0])
    v1 = rule.integrate(lambda u: (u[:, 0] - 1.0) ** 2)
    k2 = rule.integrate(lambda u: (u[:, 1] + 2.0) ** 4)
    assert m1 == pytest.approx(1.0, abs=1e-12)
    assert v1 == pytest.approx(0.25, rel=1e-12)
    assert k2 == pytest.approx(3.0 * 1.5**4, rel=1e-12)

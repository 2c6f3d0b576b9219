"""Quadrature rules for compactly supported policy integrands.

Three rules cover everything the package integrates:

* tensor-product Gauss-Legendre on a rectangle (the workhorse box rule),
* a polar Gauss-Jacobi rule on an ellipse that builds the boundary factor
  (1 - s)**alpha into the weights, where s is the elliptical radius^2 --
  q-Gaussian densities are exactly C * level**alpha * (1 - s)**alpha, so
  this rule integrates their moments to machine precision despite the
  kink at the support boundary,
* the same radial treatment on a star-shaped domain with an arbitrary
  per-angle boundary radius, for q-slices that are not exact quadratics.

A probability-weighted Gauss-Hermite grid handles the Gaussian (p = 1)
branch, whose support is the whole plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class WeightedPoints:
    """A discrete rule: integral ~ sum(weights * f(points)).

    ``one_minus_x`` is populated by the Jacobi rules; it holds, per point,
    the radial factor whose alpha-power was moved into the weights. A
    caller integrating f(u) = (g(u))_+**alpha * h(u) must evaluate
    (g(u) / (scale * one_minus_x))**alpha * h(u) instead, with ``scale``
    whatever makes the ratio O(1) (see the call sites).
    """

    points: np.ndarray
    weights: np.ndarray
    one_minus_x: np.ndarray | None = None

    def integrate(self, f) -> float:
        return float(self.weights @ np.asarray(f(self.points), dtype=float))


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def box_rule(box, n: int = 64) -> WeightedPoints:
    """Tensor Gauss-Legendre rule on [x0, x1] x [y0, y1]."""
    (x0, x1), (y0, y1) = box
    xs, wx = gauss_legendre(n, x0, x1)
    ys, wy = gauss_legendre(n, y0, y1)
    px, py = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([px.ravel(), py.ravel()])
    weights = np.outer(wx, wy).ravel()
    return WeightedPoints(points, weights)


def integrate_box(f, box, n: int = 64) -> float:
    """Integrate a vectorized f over a rectangle with the 64-node default."""
    rule = box_rule(box, n)
    return rule.integrate(f)


def ellipse_jacobi_rule(
    center,
    semi_axes,
    alpha: float,
    n_rad: int = 48,
    n_ang: int = 128,
) -> WeightedPoints:
    """Polar rule on the ellipse sum((u_i - c_i)^2 / se_i^2) <= 1.

    Weights absorb (1 - s)**alpha with s the squared elliptical radius:

        integral of g(u) * (1 - s(u))**alpha du  ~  sum(weights * g(points))

    The angular direction uses the periodic trapezoid (spectrally accurate
    for these smooth-in-angle integrands), the radial direction Gauss-Jacobi
    in s = rho^2. one_minus_x returns 1 - s per point so callers can restore
    extra powers of the boundary factor (a density to the power p carries
    (1 - s)**(alpha + 1)).  Negative alpha down to (but excluding) -1 is
    legitimate Gauss-Jacobi territory and covers derivative-of-density
    integrands whose boundary exponent drops by one.
    """
    if alpha <= -1.0:
        raise ValueError("alpha must exceed -1 for an integrable weight")
    cx, cy = center
    se1, se2 = semi_axes
    xj, wj = roots_jacobi(n_rad, alpha, 0.0)
    s = 0.5 * (xj + 1.0)
    rho = np.sqrt(s)
    phi = 2.0 * np.pi * np.arange(n_ang) / n_ang
    cphi, sphi = np.cos(phi), np.sin(phi)
    u1 = cx + se1 * np.outer(rho, cphi)
    u2 = cy + se2 * np.outer(rho, sphi)
    points = np.column_stack([u1.ravel(), u2.ravel()])
    w_rad = se1 * se2 * (np.pi / n_ang) * (0.5 ** (alpha + 1.0)) * wj
    weights = np.repeat(w_rad, n_ang)
    one_minus_x = np.repeat(1.0 - s, n_ang)
    return WeightedPoints(points, weights, one_minus_x)


def star_jacobi_rule(
    center,
    radii: np.ndarray,
    alpha: float,
    n_rad: int = 48,
) -> WeightedPoints:
    """Polar Gauss-Jacobi rule on {rho <= R(phi)} around ``center``.

    ``radii`` gives R at n_ang equally spaced angles (the caller finds the
    boundary, e.g. by ray bisection on a q-slice). The radial weight
    (1 - x)**alpha sits at the outer boundary; an integrand of the form
    f(u) = (g(u))_+**alpha * h(u) with g vanishing linearly at the boundary
    is integrated as sum(weights * (g/one_minus_x)**alpha * h).
    """
    if alpha <= -1.0:
        raise ValueError("alpha must exceed -1 for an integrable weight")
    radii = np.asarray(radii, dtype=float)
    n_ang = radii.size
    cx, cy = center
    xj, wj = roots_jacobi(n_rad, alpha, 0.0)
    phi = 2.0 * np.pi * np.arange(n_ang) / n_ang
    # rho_{kj} = R_k * (1 + x_j) / 2, jacobian rho drho = R^2 (1+x)/4 dx
    rho = 0.5 * np.outer(1.0 + xj, radii)
    u1 = cx + rho * np.cos(phi)
    u2 = cy + rho * np.sin(phi)
    points = np.column_stack([u1.ravel(), u2.ravel()])
    weights = (
        (2.0 * np.pi / n_ang) * 0.25 * np.outer(wj * (1.0 + xj), radii**2)
    ).ravel()
    one_minus_x = np.repeat(1.0 - xj, n_ang)
    return WeightedPoints(points, weights, one_minus_x)


def gaussian_rule(center, sigmas, n: int = 40) -> WeightedPoints:
    """Probability-weighted Gauss-Hermite grid for a diagonal 2-D Gaussian.

    Returns weights summing to one, so sum(weights * f(points)) estimates
    E[f(U)] under U ~ N(center, diag(sigmas^2)).
    """
    z, w = hermegauss(n)
    w = w / np.sqrt(2.0 * np.pi)
    cx, cy = center
    s1, s2 = sigmas
    g1, g2 = np.meshgrid(cx + s1 * z, cy + s2 * z, indexing="ij")
    points = np.column_stack([g1.ravel(), g2.ravel()])
    weights = np.outer(w, w).ravel()
    return WeightedPoints(points, weights)

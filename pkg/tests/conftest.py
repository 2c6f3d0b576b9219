"""Shared test oracles.

Everything here is deliberately independent of the package's own numerics:
plain RK4 time stepping, histogram chi-square with per-cell Gauss-Legendre
cell masses, and Richardson-style difference quotients. Tests compare
package output against these.
"""

import numpy as np
from scipy.stats import chi2

from tsq.quadrature import integrate_box


def rk4_backward(deriv, y_end, t_end, t_start, n_steps):
    """Integrate dy/dt = deriv(t, y) backward from (t_end, y_end).

    Returns the grid (ascending) and solution values on it.
    """
    ts = np.linspace(t_end, t_start, n_steps + 1)
    h = (t_start - t_end) / n_steps
    ys = np.empty(n_steps + 1)
    ys[0] = y_end
    y = y_end
    for i, t in enumerate(ts[:-1]):
        k1 = deriv(t, y)
        k2 = deriv(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = deriv(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = deriv(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ys[i + 1] = y
    return ts[::-1], ys[::-1]


def chi_square_gof(policy, samples, grid=10, cell_nodes=24):
    """Chi-square goodness-of-fit p-value on a grid over the support box.

    Expected cell masses come from per-cell Gauss-Legendre quadrature of
    the density; cells with expected count below 5 are folded into the
    largest cell so the chi-square approximation stays valid.
    """
    (lo1, hi1), (lo2, hi2) = policy.support().box()
    xs = np.linspace(lo1, hi1, grid + 1)
    ys = np.linspace(lo2, hi2, grid + 1)
    counts, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=[xs, ys])
    probs = np.empty((grid, grid))
    for i in range(grid):
        for j in range(grid):
            probs[i, j] = integrate_box(
                policy.density,
                ((xs[i], xs[i + 1]), (ys[j], ys[j + 1])),
                n=cell_nodes,
            )
    n = samples.shape[0]
    expected = probs.ravel() * n
    observed = counts.ravel()
    small = expected < 5.0
    if small.any():
        target = np.argmax(expected)
        expected[target] += expected[small].sum()
        observed[target] += observed[small].sum()
        expected = expected[~small]
        observed = observed[~small]
    # residual mass mismatch from quadrature is far below sampling noise
    expected *= observed.sum() / expected.sum()
    stat = float(((observed - expected) ** 2 / expected).sum())
    dof = observed.size - 1
    return float(chi2.sf(stat, dof))


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def richardson_diff(f, x, h):
    """Fourth-order Richardson extrapolated difference quotient."""
    d1 = central_diff(f, x, h)
    d2 = central_diff(f, x, 0.5 * h)
    return (4.0 * d2 - d1) / 3.0

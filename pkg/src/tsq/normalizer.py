"""Normalizing-function machinery for arbitrary q-function slices.

Given a slice u -> q(t,x,u) at fixed (t,x), the optimal policy is

    pi(u) = ((p-1)/(p*gamma))**(1/(p-1)) * (q(u) + psi)_+**(1/(p-1))

with the scalar psi (the Lagrange multiplier of the normalization
constraint) chosen so pi integrates to one. ``solve_psi`` finds psi by
bisection on the monotone constraint integral, ``policy_from_q`` wraps the
result as a density, and ``consistency_residual`` evaluates the certificate
integral of (q + gamma * l_p(pi)) pi, which vanishes exactly when q is the
true q-function of its own induced policy.

The constraint integral uses a polar Gauss-Jacobi rule around the slice's
maximizer with per-ray bisection for the support boundary; positive regions
are assumed star-shaped around the maximizer (true for every quadratic-type
slice this package produces).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .entropy import EntropyParams, tsallis
from .policy import QGaussian2D
from .quadrature import box_rule, star_jacobi_rule

PSI_TOL = 1e-10
BOUNDARY_TOL = 1e-8
N_ANGLES = 128
N_RADIAL = 48


class NoSolutionError(RuntimeError):
    """No psi on the expanded bracket normalizes the slice."""


def _probe_vectorized(fn: Callable) -> Callable:
    """Return fn if it accepts (n, 2) arrays, else a row-wise wrapper."""
    probe = np.zeros((3, 2))
    try:
        out = np.asarray(fn(probe), dtype=float)
        if out.shape == (3,):
            return fn
    except Exception:
        pass

    def rowwise(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.array([float(fn(row)) for row in pts])

    return rowwise


@dataclass
class QSlice:
    """A q-function slice u -> q(u) with its numerical integration box.

    ``evaluate`` should be vectorized over (n, 2) action arrays; plain
    scalar callables are wrapped (slowly) on construction. ``search_box``
    must contain the support of the solved policy; this is validated after
    solving.
    """

    evaluate: Callable
    search_box: tuple
    _fn: Callable = field(init=False, repr=False)

    def __post_init__(self) -> None:
        (l1, h1), (l2, h2) = self.search_box
        if not (l1 < h1 and l2 < h2):
            raise ValueError(f"degenerate search box {self.search_box}")
        self._fn = _probe_vectorized(self.evaluate)

    def __call__(self, pts):
        return np.asarray(self._fn(pts), dtype=float)


def _argmax_on_box(slice_: QSlice, n: int = 48, stages: int = 4):
    """Locate the slice maximizer by staged grid refinement."""
    (l1, h1), (l2, h2) = slice_.search_box
    best = None
    for _ in range(stages):
        xs = np.linspace(l1, h1, n)
        ys = np.linspace(l2, h2, n)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        vals = slice_(pts)
        k = int(np.argmax(vals))
        best = pts[k]
        dx, dy = (h1 - l1) / (n - 1), (h2 - l2) / (n - 1)
        l1, h1 = best[0] - 2 * dx, best[0] + 2 * dx
        l2, h2 = best[1] - 2 * dy, best[1] + 2 * dy
    (lo1, hi1), (lo2, hi2) = slice_.search_box
    best = np.array([np.clip(best[0], lo1, hi1), np.clip(best[1], lo2, hi2)])
    return best, float(slice_(best[None, :])[0])


def _ray_geometry(slice_: QSlice, center):
    """Unit ray directions and distances to the box boundary."""
    phis = 2.0 * np.pi * np.arange(N_ANGLES) / N_ANGLES
    dirs = np.column_stack([np.cos(phis), np.sin(phis)])
    (l1, h1), (l2, h2) = slice_.search_box
    with np.errstate(divide="ignore"):
        tx = np.where(dirs[:, 0] > 0, (h1 - center[0]) / dirs[:, 0], np.inf)
        tx = np.where(dirs[:, 0] < 0, (l1 - center[0]) / dirs[:, 0], tx)
        ty = np.where(dirs[:, 1] > 0, (h2 - center[1]) / dirs[:, 1], np.inf)
        ty = np.where(dirs[:, 1] < 0, (l2 - center[1]) / dirs[:, 1], ty)
    return dirs, np.minimum(tx, ty)


def _boundary_radii(slice_: QSlice, psi: float, center, dirs, r_box, n_iter: int = 48):
    """Per-ray radius where q + psi crosses zero (capped by the box)."""
    f_edge = slice_(center + r_box[:, None] * dirs) + psi
    capped = f_edge > 0.0
    lo = np.zeros_like(r_box)
    hi = r_box.copy()
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        inside = slice_(center + mid[:, None] * dirs) + psi > 0.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return np.where(capped, r_box, 0.5 * (lo + hi))


def _constraint_integral(
    slice_: QSlice, entropy: EntropyParams, psi: float, center, q_center, dirs, r_box
) -> float:
    """I(psi) = integral of ((p-1)/(p gamma))^(1/(p-1)) (q+psi)_+^(1/(p-1))."""
    if q_center + psi <= 0.0:
        return 0.0
    p, gamma = entropy.p, entropy.gamma
    alpha = 1.0 / (p - 1.0)
    pref = ((p - 1.0) / (p * gamma)) ** alpha
    radii = _boundary_radii(slice_, psi, center, dirs, r_box)
    if np.all(radii <= 0.0):
        return 0.0
    rule = star_jacobi_rule(center, radii, alpha, n_rad=N_RADIAL)
    g = slice_(rule.points) + psi
    ratio = np.maximum(g, 0.0) / rule.one_minus_x
    return float(pref * (rule.weights @ ratio**alpha))


def solve_psi(slice_: QSlice, entropy: EntropyParams, tol: float = PSI_TOL) -> float:
    """Solve the normalization constraint for psi by bisection.

    The constraint integral is strictly increasing in psi once the positive
    region is non-empty, so the root is unique. Raises NoSolutionError when
    bracket expansion exceeds 1e3 * (1 + max|q|) without a sign change.
    """
    if entropy.shannon:
        raise ValueError("psi is a p > 1 construct; the Gibbs branch needs no root")
    center, q_center = _argmax_on_box(slice_)
    dirs, r_box = _ray_geometry(slice_, center)

    def integral(psi):
        return _constraint_integral(slice_, entropy, psi, center, q_center, dirs, r_box)

    q_scale = 1.0 + abs(q_center)
    lo = -q_center  # empty positive region: I = 0
    step = max(entropy.gamma, 0.25 * q_scale)
    hi = lo + step
    while integral(hi) < 1.0:
        step *= 2.0
        hi = lo + step
        if step > 1e3 * q_scale:
            raise NoSolutionError(
                f"constraint integral stayed below 1 out to psi = {hi:.3g}"
            )
    # monotonicity spot check before trusting bisection
    probes = np.linspace(lo, hi, 5)
    vals = [integral(p_) for p_ in probes]
    if any(b < a - 1e-9 for a, b in zip(vals, vals[1:])):
        raise RuntimeError("constraint integral is not monotone on the bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if integral(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    psi = 0.5 * (lo + hi)
    _validate_box_boundary(slice_, entropy, psi)
    return psi


def _validate_box_boundary(slice_: QSlice, entropy: EntropyParams, psi: float) -> None:
    (l1, h1), (l2, h2) = slice_.search_box
    t = np.linspace(0.0, 1.0, 201)
    edges = np.concatenate(
        [
            np.column_stack([l1 + (h1 - l1) * t, np.full_like(t, l2)]),
            np.column_stack([l1 + (h1 - l1) * t, np.full_like(t, h2)]),
            np.column_stack([np.full_like(t, l1), l2 + (h2 - l2) * t]),
            np.column_stack([np.full_like(t, h1), l2 + (h2 - l2) * t]),
        ]
    )
    p, gamma = entropy.p, entropy.gamma
    alpha = 1.0 / (p - 1.0)
    pref = ((p - 1.0) / (p * gamma)) ** alpha
    dens = pref * np.maximum(slice_(edges) + psi, 0.0) ** alpha
    if dens.max() > BOUNDARY_TOL:
        raise ValueError(
            "search_box clips the policy support "
            f"(boundary density {dens.max():.3g})"
        )


@dataclass
class NumericPolicy:
    """Density built from a q-slice; callable like the density itself."""

    entropy: EntropyParams
    slice: QSlice
    psi: float | None  # None on the Gibbs branch
    log_offset: float | None = None  # Gibbs: log pi = (q - offset)/gamma - log Z
    log_z: float | None = None
    center: np.ndarray | None = None

    def __call__(self, u):
        return self.density(u)

    def density(self, u):
        u = np.asarray(u, dtype=float)
        pts = np.atleast_2d(u)
        q = self.slice(pts)
        if self.entropy.shannon:
            out = np.exp(self.log_density_points(pts))
        else:
            p, gamma = self.entropy.p, self.entropy.gamma
            alpha = 1.0 / (p - 1.0)
            pref = ((p - 1.0) / (p * gamma)) ** alpha
            out = pref * np.maximum(q + self.psi, 0.0) ** alpha
        return out if u.ndim > 1 else float(out[0])

    def log_density_points(self, pts):
        if not self.entropy.shannon:
            raise ValueError("direct log density only on the Gibbs branch")
        q = self.slice(pts)
        return (q - self.log_offset) / self.entropy.gamma - self.log_z


def policy_from_q(slice_: QSlice, entropy: EntropyParams) -> NumericPolicy:
    """Build the optimal-policy density for a q-slice.

    p > 1 routes through solve_psi; p = 1 normalizes the Gibbs density
    exp(q/gamma) over the search box.
    """
    if entropy.shannon:
        rule = box_rule(slice_.search_box, n=96)
        q = slice_(rule.points)
        offset = float(q.max())
        z = float(rule.weights @ np.exp((q - offset) / entropy.gamma))
        if not np.isfinite(z) or z <= 0.0:
            raise NoSolutionError("Gibbs integral not finite on the search box")
        center, _ = _argmax_on_box(slice_)
        return NumericPolicy(
            entropy, slice_, None, log_offset=offset, log_z=np.log(z), center=center
        )
    center, _ = _argmax_on_box(slice_)
    psi = solve_psi(slice_, entropy)
    return NumericPolicy(entropy, slice_, psi, center=center)


def consistency_residual(slice_: QSlice, policy, entropy: EntropyParams) -> float:
    """Signed certificate integral of (q + gamma * l_p(pi)) pi du.

    Zero (within quadrature tolerance) certifies that the slice is the
    q-function of the supplied policy. Accepts either a QGaussian2D or a
    NumericPolicy from policy_from_q.
    """
    gamma = entropy.gamma
    if isinstance(policy, QGaussian2D):
        if entropy != policy.entropy:
            raise ValueError("entropy params do not match the policy's")
        return policy.expectation(
            lambda u: slice_(u) + gamma * tsallis(entropy, policy.density(u))
        )
    if not isinstance(policy, NumericPolicy):
        raise TypeError("expected QGaussian2D or NumericPolicy")
    if entropy.shannon:
        rule = box_rule(policy.slice.search_box, n=96)
        logpi = policy.log_density_points(rule.points)
        vals = (slice_(rule.points) - gamma * logpi) * np.exp(logpi)
        return float(rule.weights @ vals)
    p = entropy.p
    alpha = 1.0 / (p - 1.0)
    pref = ((p - 1.0) / (p * gamma)) ** alpha
    dirs, r_box = _ray_geometry(policy.slice, policy.center)
    radii = _boundary_radii(policy.slice, policy.psi, policy.center, dirs, r_box)
    rule = star_jacobi_rule(policy.center, radii, alpha, n_rad=N_RADIAL)
    g = np.maximum(policy.slice(rule.points) + policy.psi, 0.0)
    ratio = g / rule.one_minus_x
    dens = pref * g**alpha
    vals = (slice_(rule.points) + gamma * tsallis(entropy, np.maximum(dens, 1e-300)))
    return float(rule.weights @ (vals * pref * ratio**alpha))

"""Two-dimensional q-Gaussian policy distributions.

For entropy index p > 1 the optimal policies in this package all take the
compactly supported form

    pi(u) = ((p-1)/(p*gamma))**(1/(p-1))
            * (level - a1*(u1-m1)^2 - a2*(u2-m2)^2)_+**(1/(p-1)),

an ellipse-supported power of a quadratic ("q-Gaussian"). The Shannon
branch p = 1 degenerates to a diagonal Gaussian with variances
gamma/(2*a_i). ``normalize_level`` gives the unique level making the
density integrate to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .entropy import EntropyParams
from .quadrature import WeightedPoints, ellipse_jacobi_rule, gaussian_rule

DEFAULT_PROPOSAL_CAP = 1_000_000


class SamplingError(RuntimeError):
    """Rejection sampling exceeded its proposal budget."""


def normalize_level(entropy: EntropyParams, a1: float, a2: float) -> float:
    """Level making the p > 1 q-Gaussian with curvatures (a1, a2) a density.

    level = (sqrt(a1*a2)/pi)**((p-1)/p) * (p/(p-1)) * gamma**(1/p)
    """
    if entropy.shannon:
        raise ValueError("p = 1 has no level; the Gaussian branch self-normalizes")
    if a1 <= 0.0 or a2 <= 0.0:
        raise ValueError("curvatures must be positive")
    p, gamma = entropy.p, entropy.gamma
    return (np.sqrt(a1 * a2) / np.pi) ** ((p - 1.0) / p) * (p / (p - 1.0)) * gamma ** (1.0 / p)


@dataclass(frozen=True)
class Support:
    center: tuple[float, float]
    semi_axes: tuple[float, float] | None
    bounded: bool

    def box(self, inflate: float = 0.0):
        """Axis-aligned bounding box, optionally inflated by a fraction."""
        if not self.bounded:
            raise ValueError("unbounded support has no bounding box")
        (cx, cy), (s1, s2) = self.center, self.semi_axes
        f = 1.0 + inflate
        return ((cx - f * s1, cx + f * s1), (cy - f * s2, cy + f * s2))


@dataclass(frozen=True)
class QGaussian2D:
    """q-Gaussian policy over action pairs.

    Parameters
    ----------
    entropy : EntropyParams
    center : (m1, m2)
        Mode and mean of the distribution, action units.
    curvature : (a1, a2)
        Positive quadratic-form coefficients, reward per action^2.
    level : float or None
        Height of the quadratic cap (p > 1); must be None on the Shannon
        branch, where the Gaussian normalizes itself.
    """

    entropy: EntropyParams
    center: tuple[float, float]
    curvature: tuple[float, float]
    level: float | None = None

    def __post_init__(self) -> None:
        a1, a2 = self.curvature
        if not (np.isfinite(a1) and np.isfinite(a2) and a1 > 0.0 and a2 > 0.0):
            raise ValueError(f"curvatures must be positive, got {self.curvature}")
        if self.entropy.shannon:
            if self.level is not None:
                raise ValueError("level is meaningless for p = 1; pass None")
        else:
            if self.level is None or not np.isfinite(self.level) or self.level <= 0.0:
                raise ValueError(f"p > 1 requires a positive level, got {self.level}")

    # -- basic geometry -------------------------------------------------

    @property
    def _alpha(self) -> float:
        return 1.0 / (self.entropy.p - 1.0)

    @property
    def _prefactor(self) -> float:
        p, gamma = self.entropy.p, self.entropy.gamma
        return ((p - 1.0) / (p * gamma)) ** (1.0 / (p - 1.0))

    def support(self) -> Support:
        if self.entropy.shannon:
            return Support(self.center, None, bounded=False)
        a1, a2 = self.curvature
        return Support(
            self.center,
            (float(np.sqrt(self.level / a1)), float(np.sqrt(self.level / a2))),
            bounded=True,
        )

    def bounding_box(self, inflate: float = 0.0):
        """Support box for p > 1; a 9-sigma soft box on the Shannon branch."""
        if not self.entropy.shannon:
            return self.support().box(inflate)
        (cx, cy), (s1, s2) = self.center, self._sigmas()
        return ((cx - 9.0 * s1, cx + 9.0 * s1), (cy - 9.0 * s2, cy + 9.0 * s2))

    def _sigmas(self) -> tuple[float, float]:
        gamma = self.entropy.gamma
        a1, a2 = self.curvature
        return float(np.sqrt(0.5 * gamma / a1)), float(np.sqrt(0.5 * gamma / a2))

    # -- density and moments --------------------------------------------

    def density(self, u):
        """Density at action pairs; u has shape (..., 2)."""
        u = np.asarray(u, dtype=float)
        d1 = u[..., 0] - self.center[0]
        d2 = u[..., 1] - self.center[1]
        a1, a2 = self.curvature
        quad = a1 * d1**2 + a2 * d2**2
        if self.entropy.shannon:
            gamma = self.entropy.gamma
            out = np.sqrt(a1 * a2) / (gamma * np.pi) * np.exp(-quad / gamma)
        else:
            out = self._prefactor * np.maximum(self.level - quad, 0.0) ** self._alpha
        return out if out.shape else float(out)

    def peak_density(self) -> float:
        if self.entropy.shannon:
            a1, a2 = self.curvature
            return float(np.sqrt(a1 * a2) / (self.entropy.gamma * np.pi))
        return float(self._prefactor * self.level**self._alpha)

    def normalization(self) -> float:
        """Closed-form integral of the density (exactly 1 on the p=1 branch)."""
        if self.entropy.shannon:
            return 1.0
        p = self.entropy.p
        a1, a2 = self.curvature
        return float(
            self._prefactor
            * self.level ** (p / (p - 1.0))
            * np.pi
            / (np.sqrt(a1 * a2) * (p / (p - 1.0)))
        )

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return abs(self.normalization() - 1.0) <= tol

    def _require_normalized(self) -> None:
        if not self.is_normalized(1e-7):
            raise ValueError(
                f"policy is not normalized (integral = {self.normalization():.8g})"
            )

    def moments(self):
        """(mean, variance) per action coordinate, both closed form."""
        self._require_normalized()
        mean = np.array(self.center, dtype=float)
        a = np.array(self.curvature, dtype=float)
        if self.entropy.shannon:
            var = 0.5 * self.entropy.gamma / a
        else:
            p = self.entropy.p
            var = self.level * (p - 1.0) / (2.0 * a * (2.0 * p - 1.0))
        return mean, var

    # -- integration helpers --------------------------------------------

    def quad_rule(self, n_rad: int = 48, n_ang: int = 128) -> WeightedPoints:
        """Rule matched to this density's boundary behavior.

        p > 1: polar Gauss-Jacobi on the support ellipse with the density's
        own (1-s)**(1/(p-1)) factor in the weights, so
        integral f*pi du = prefactor * level**alpha * sum(w * f(points)).
        p = 1: probability-weighted Hermite grid (weights already integrate
        the density): integral f*pi du = sum(w * f(points)).
        """
        if self.entropy.shannon:
            return gaussian_rule(self.center, self._sigmas(), n=max(n_rad, 40))
        return ellipse_jacobi_rule(
            self.center, self.support().semi_axes, self._alpha, n_rad, n_ang
        )

    def expectation(self, f, n_rad: int = 48, n_ang: int = 128) -> float:
        """E[f(U)] for vectorized f by the matched quadrature rule."""
        rule = self.quad_rule(n_rad, n_ang)
        vals = np.asarray(f(rule.points), dtype=float)
        if self.entropy.shannon:
            return float(rule.weights @ vals)
        scale = self._prefactor * self.level**self._alpha
        return float(scale * (rule.weights @ vals))

    # -- sampling ---------------------------------------------------------

    def sample(self, n: int, rng, max_proposals: int = DEFAULT_PROPOSAL_CAP):
        """Draw n action pairs.

        p > 1 uses acceptance-rejection with uniform proposals over the
        support's bounding rectangle and the center density as envelope;
        p = 1 transforms standard normals. Raises SamplingError if the
        proposal budget is exhausted.
        """
        if n < 0:
            raise ValueError("sample size must be non-negative")
        if self.entropy.shannon:
            z = ndtri(rng.random((n, 2)))
            s1, s2 = self._sigmas()
            return np.array(self.center) + z * np.array([s1, s2])
        (lo1, hi1), (lo2, hi2) = self.support().box()
        lo = np.array([lo1, lo2])
        span = np.array([hi1 - lo1, hi2 - lo2])
        envelope = self.peak_density()
        out = np.empty((n, 2))
        filled = 0
        used = 0
        while filled < n:
            if used >= max_proposals:
                raise SamplingError(
                    f"accepted {filled}/{n} after {used} proposals"
                )
            chunk = min(max(32, 2 * (n - filled)), max_proposals - used)
            u = lo + span * rng.random((chunk, 2))
            accept = rng.random(chunk) * envelope < self.density(u)
            used += chunk
            take = min(int(accept.sum()), n - filled)
            out[filled : filled + take] = u[accept][:take]
            filled += take
        return out


def make_normalized(
    entropy: EntropyParams, center, curvature
) -> QGaussian2D:
    """Build the normalized q-Gaussian (level solved in closed form)."""
    if entropy.shannon:
        return QGaussian2D(entropy, tuple(center), tuple(curvature), None)
    level = normalize_level(entropy, *curvature)
    return QGaussian2D(entropy, tuple(center), tuple(curvature), level)


def entropy_integral(params: EntropyParams, policy: QGaussian2D) -> float:
    """Entropy moment integral l_p(pi) pi du of a normalized policy.

    Closed form level-based expression for p > 1; quadrature on the
    Gaussian branch.
    """
    if params != policy.entropy:
        raise ValueError("entropy params do not match the policy's")
    policy._require_normalized()
    if params.shannon:
        rule = policy.quad_rule()
        dens = policy.density(rule.points)
        return float(rule.weights @ (-np.log(dens)))
    p, gamma = params.p, params.gamma
    return 1.0 / (p - 1.0) - policy.level / ((2.0 * p - 1.0) * gamma)

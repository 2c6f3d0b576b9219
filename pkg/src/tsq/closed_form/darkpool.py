"""Closed-form solution and exact parameterizations for the dark-pool problem.

The relaxed problem (terminal penalty -ell*x^2) has value
V_ell(t, x) = alpha_ell(t) x^2 / 2 + beta_ell(t) with alpha_ell solving a
Riccati equation in closed form and beta_ell an explicit time integral.
The ell -> infinity limit gives the liquidation solution alpha_star /
beta_star. The learnable families J^theta and q^zeta reproduce these
exactly at the true parameter vectors returned by ``dp_true_params``.

All time arguments broadcast as numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from ..entropy import EntropyParams
from ..envs import DarkPoolParams
from ..policy import QGaussian2D, normalize_level
from .params import OutOfDomainError, ParamVector

BETA_TAIL_NODES = 64
BETA_STAR_NODES = 64


@lru_cache(maxsize=16)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=16)
def _jacobi(n: int, alpha: float):
    return roots_jacobi(n, alpha, 0.0)


def _tail_integral(f, t, T: float, n: int):
    """integral_t^T f(s) ds, elementwise over an array of lower limits."""
    t = np.asarray(t, dtype=float)
    x, w = _leggauss(n)
    half = 0.5 * (T - t)[..., None]
    s = t[..., None] + half * (x + 1.0)
    return (f(s) * half) @ w


def _horizon_profile(s, params: DarkPoolParams):
    """(T - s) * (-alpha_star(s)): analytic across the horizon, value
    2*kappa at s = T. Factors the liquidation divergence out of alpha_star
    so beta_star integrands stay smooth."""
    w = w_rate(params)
    tau = params.T - np.asarray(s, dtype=float)
    with np.errstate(invalid="ignore"):
        ratio = np.where(tau > 0.0, tau / np.expm1(w * tau), 1.0 / w)
    return params.kappa * (w - params.lam) * tau + 2.0 * params.kappa * w * ratio


def w_rate(params: DarkPoolParams) -> float:
    """w = sqrt(lam^2 + 4c/kappa), the Riccati decay rate."""
    return float(np.sqrt(params.lam**2 + 4.0 * params.c / params.kappa))


def dp_alpha_ell(t, params: DarkPoolParams, ell: float):
    """Riccati solution with terminal value -ell."""
    lam, kappa, c, T = params.lam, params.kappa, params.c, params.T
    w = w_rate(params)
    e = np.exp(w * (T - np.asarray(t, dtype=float)))
    num = (ell * kappa * (w - lam) + 4.0 * c * kappa) * e + ell * kappa * (w + lam) - 4.0 * c * kappa
    den = (kappa * (w + lam) + ell) * e + kappa * (w - lam) - ell
    out = -num / den
    return out if out.ndim else float(out)


def dp_alpha_star(t, params: DarkPoolParams):
    """ell -> infinity limit; diverges at t = T."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= params.T):
        raise ValueError("alpha* diverges at t = T")
    w = w_rate(params)
    em1 = np.expm1(w * (params.T - t))
    out = -params.kappa * (w - params.lam) - 2.0 * params.kappa * w / em1
    return out if out.ndim else float(out)


def _psi_tilde_from_alpha(alpha, params: DarkPoolParams, entropy: EntropyParams):
    p, gamma = entropy.p, entropy.gamma
    base = np.sqrt(-params.kappa * params.lam * np.asarray(alpha) / 2.0) / np.pi
    return base ** ((p - 1.0) / p) * (p / (p - 1.0)) * gamma ** (1.0 / p)


def dp_psi_tilde(t, params: DarkPoolParams, entropy: EntropyParams):
    """Support level of the optimal policy; equals
    normalize_level(entropy, kappa, -lam*alpha*(t)/2)."""
    if entropy.shannon:
        raise ValueError("p = 1 has no support level")
    out = _psi_tilde_from_alpha(dp_alpha_star(t, params), params, entropy)
    return out if np.ndim(out) else float(out)


def _beta_integrand(alpha_fn, params, entropy):
    p, gamma = entropy.p, entropy.gamma
    if entropy.shannon:
        def f(s):
            a = np.asarray(alpha_fn(s))
            return np.log(gamma * np.pi / np.sqrt(-params.kappa * params.lam * a / 2.0))
        return gamma, f
    c_p = p**2 * gamma ** (1.0 / p) / ((2.0 * p - 1.0) * (p - 1.0))

    def f(s):
        a = np.asarray(alpha_fn(s))
        base = np.sqrt(-params.kappa * params.lam * a / 2.0) / np.pi
        return base ** ((p - 1.0) / p)

    return -c_p, f


def dp_beta_ell(t, params: DarkPoolParams, entropy: EntropyParams, ell: float):
    """Constant term of V_ell: an explicit tail integral of alpha_ell."""
    coeff, f = _beta_integrand(lambda s: dp_alpha_ell(s, params, ell), params, entropy)
    out = coeff * _tail_integral(f, t, params.T, BETA_TAIL_NODES)
    if not entropy.shannon:
        out = out + entropy.gamma * (params.T - np.asarray(t)) / (entropy.p - 1.0)
    return out if np.ndim(out) else float(out)


def dp_beta_star(t, params: DarkPoolParams, entropy: EntropyParams):
    """Liquidation limit of beta_ell.

    alpha_star gives the integrand a (T-s)^(-(p-1)/(2p)) endpoint
    singularity. Writing -alpha_star = profile / (T-s) with an analytic
    profile, the p > 1 integral is a Gauss-Jacobi quadrature in the weight
    (T-s)^(-(p-1)/(2p)) and the p = 1 log term integrates in closed form.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t > params.T):
        raise ValueError("t beyond the horizon")
    T, gamma = params.T, entropy.gamma
    tau0 = np.maximum(T - t, 0.0)
    kl = params.kappa * params.lam
    if entropy.shannon:
        # integrand = log(gamma*pi) - log(sqrt(kl/2)) - log(profile)/2
        #             + log(T-s)/2
        const = np.log(gamma * np.pi) - 0.5 * np.log(kl / 2.0)
        log_prof = _tail_integral(
            lambda s: np.log(_horizon_profile(s, params)), t, T, BETA_TAIL_NODES
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            log_part = np.where(tau0 > 0.0, tau0 * (np.log(tau0) - 1.0), 0.0)
        out = gamma * (const * tau0 - 0.5 * log_prof + 0.5 * log_part)
        return out if out.ndim else float(out)
    p = entropy.p
    c_p = p**2 * gamma ** (1.0 / p) / ((2.0 * p - 1.0) * (p - 1.0))
    a = -(p - 1.0) / (2.0 * p)
    x, w = _jacobi(BETA_STAR_NODES, a)
    half = 0.5 * tau0[..., None]
    s = T - half * (1.0 - x)
    prof = (np.sqrt(kl * _horizon_profile(s, params) / 2.0) / np.pi) ** ((p - 1.0) / p)
    integral = (prof @ w) * (0.5 * tau0) ** (1.0 + a)
    out = gamma * tau0 / (p - 1.0) - c_p * integral
    return out if out.ndim else float(out)


def dp_value_ell(t, x, params: DarkPoolParams, entropy: EntropyParams, ell: float):
    """V_ell(t, x) = alpha_ell(t) x^2 / 2 + beta_ell(t)."""
    a = dp_alpha_ell(t, params, ell)
    b = dp_beta_ell(t, params, entropy, ell)
    out = 0.5 * np.asarray(a) * np.asarray(x, dtype=float) ** 2 + b
    return out if np.ndim(out) else float(out)


def dp_value_star(t, x, params: DarkPoolParams, entropy: EntropyParams):
    a = dp_alpha_star(t, params)
    b = dp_beta_star(t, params, entropy)
    out = 0.5 * np.asarray(a) * np.asarray(x, dtype=float) ** 2 + b
    return out if np.ndim(out) else float(out)


def dp_optimal_policy(t, x, params: DarkPoolParams, entropy: EntropyParams) -> QGaussian2D:
    """The exact optimal policy: q-Gaussian (Gaussian at p = 1)."""
    alpha = dp_alpha_star(float(t), params)
    center = (-alpha * x / (2.0 * params.kappa), float(x))
    curvature = (params.kappa, -params.lam * alpha / 2.0)
    if entropy.shannon:
        return QGaussian2D(entropy, center, curvature, None)
    return QGaussian2D(entropy, center, curvature, normalize_level(entropy, *curvature))


def dp_true_params(params: DarkPoolParams):
    """(theta*, zeta*): the parameter vectors reproducing the truth."""
    lam, kappa, c = params.lam, params.kappa, params.c
    w = w_rate(params)
    theta = ParamVector(
        ("theta1", "theta2", "theta3", "theta4", "theta5"),
        [kappa * (w - lam), kappa * (w + lam), w, c * kappa, kappa * lam],
        (True,) * 5,
    )
    zeta = ParamVector(
        ("zeta1", "zeta2", "zeta3", "zeta4", "zeta5", "zeta6"),
        [kappa * (w - lam), kappa * (w + lam), w, c * kappa, kappa * lam, kappa],
        (True,) * 6,
    )
    return theta, zeta


def _ratio(z1, z2, z3, z4, t, T: float, ell: float):
    """The positive Riccati-shaped ratio R(t) common to J^theta and q^zeta.

    Equals -alpha_ell(t) at the true parameters. Must stay positive and
    finite; anything else is out of domain (invalid policy curvature).
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        e = np.exp(z3 * (T - np.asarray(t, dtype=float)))
        num = (ell * z1 + 4.0 * z4) * e + ell * z2 - 4.0 * z4
        den = (z2 + ell) * e + z1 - ell
        r = num / den
    if not np.all(np.isfinite(r)) or np.any(r <= 0.0):
        raise OutOfDomainError("induced Riccati ratio is not positive")
    return r


def dp_J(theta, t, x, params: DarkPoolParams, entropy: EntropyParams):
    """Parameterized value surface J^theta; broadcasts over t and x."""
    z1, z2, z3, z4, z5 = np.asarray(theta.values, dtype=float)
    if z5 <= 0.0:
        raise OutOfDomainError("theta5 must be positive")
    T, gamma, p = params.T, entropy.gamma, entropy.p
    ell = params.ell
    t = np.asarray(t, dtype=float)
    r_t = _ratio(z1, z2, z3, z4, t, T, ell)
    quad_term = -0.5 * r_t * np.asarray(x, dtype=float) ** 2
    if entropy.shannon:
        def f(s):
            r_s = _ratio(z1, z2, z3, z4, s, T, ell)
            return np.log(gamma * np.pi / np.sqrt(z5 * r_s / 2.0))
        out = quad_term + gamma * _tail_integral(f, t, T, BETA_TAIL_NODES)
        return out if np.ndim(out) else float(out)
    c_p = p**2 * gamma ** (1.0 / p) / ((2.0 * p - 1.0) * (p - 1.0))

    def f(s):
        r_s = _ratio(z1, z2, z3, z4, s, T, ell)
        return (np.sqrt(z5 * r_s / 2.0) / np.pi) ** ((p - 1.0) / p)

    out = quad_term + gamma * (T - t) / (p - 1.0) - c_p * _tail_integral(f, t, T, BETA_TAIL_NODES)
    return out if np.ndim(out) else float(out)


def dp_zeta_tilde(zeta, t, params: DarkPoolParams, entropy: EntropyParams):
    """Constant completing q^zeta so its own policy certifies it."""
    z = np.asarray(zeta.values, dtype=float)
    r = _ratio(z[0], z[1], z[2], z[3], t, params.T, params.ell)
    gamma, p = entropy.gamma, entropy.p
    base = np.sqrt(z[4] * r / 2.0) / np.pi
    if entropy.shannon:
        out = -gamma * np.log(gamma * np.pi / np.sqrt(z[4] * r / 2.0))
        return out if np.ndim(out) else float(out)
    c_p = p**2 * gamma ** (1.0 / p) / ((p - 1.0) * (2.0 * p - 1.0))
    out = c_p * base ** ((p - 1.0) / p) - gamma / (p - 1.0)
    return out if np.ndim(out) else float(out)


def dp_psi_zeta(zeta, t, params: DarkPoolParams, entropy: EntropyParams):
    """Normalizing function of q^zeta (p > 1)."""
    if entropy.shannon:
        raise ValueError("p = 1 has no normalizing function")
    z = np.asarray(zeta.values, dtype=float)
    r = _ratio(z[0], z[1], z[2], z[3], t, params.T, params.ell)
    p, gamma = entropy.p, entropy.gamma
    level = (np.sqrt(z[4] * r / 2.0) / np.pi) ** ((p - 1.0) / p) * (p / (p - 1.0)) * gamma ** (1.0 / p)
    out = level - dp_zeta_tilde(zeta, t, params, entropy)
    return out if np.ndim(out) else float(out)


def dp_q(zeta, t, x, u, params: DarkPoolParams, entropy: EntropyParams):
    """Parameterized q-surface; broadcasts over (t, x, u) arrays."""
    z = np.asarray(zeta.values, dtype=float)
    if z[5] <= 0.0 or z[4] <= 0.0:
        raise OutOfDomainError("zeta5 and zeta6 must be positive")
    r = _ratio(z[0], z[1], z[2], z[3], t, params.T, params.ell)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    xi, eta = u[..., 0], u[..., 1]
    out = (
        -z[5] * (xi - r * x / (2.0 * z[5])) ** 2
        - (z[4] * r / (2.0 * z[5])) * (eta - x) ** 2
        + dp_zeta_tilde(zeta, t, params, entropy)
    )
    return out if np.ndim(out) else float(out)


def dp_policy(zeta, t, x, params: DarkPoolParams, entropy: EntropyParams) -> QGaussian2D:
    """Sampling policy induced by q^zeta (normalized by construction)."""
    z = np.asarray(zeta.values, dtype=float)
    if z[5] <= 0.0 or z[4] <= 0.0:
        raise OutOfDomainError("zeta5 and zeta6 must be positive")
    r = float(_ratio(z[0], z[1], z[2], z[3], float(t), params.T, params.ell))
    center = (r * x / (2.0 * z[5]), float(x))
    curvature = (z[5], z[4] * r / (2.0 * z[5]))
    if entropy.shannon:
        return QGaussian2D(entropy, center, curvature, None)
    return QGaussian2D(entropy, center, curvature, normalize_level(entropy, *curvature))


@dataclass(frozen=True)
class DarkPoolSolution:
    """Bundle of the problem data with its closed-form solution handles."""

    params: DarkPoolParams
    entropy: EntropyParams

    @property
    def w(self) -> float:
        return w_rate(self.params)

    def alpha_ell(self, t, ell):
        return dp_alpha_ell(t, self.params, ell)

    def alpha_star(self, t):
        return dp_alpha_star(t, self.params)

    def value(self, t, x):
        return dp_value_ell(t, x, self.params, self.entropy, self.params.ell)

    def optimal_policy(self, t, x) -> QGaussian2D:
        return dp_optimal_policy(t, x, self.params, self.entropy)

"""Closed-form solution and parameterizations for the repo (non-LQ) problem.

Power-utility cash-flow control with two lending channels. The value
function separates as V(t, x) = alpha_star(t) x^h / h + beta_star(t), with
alpha_star a plain exponential. Closed forms exist only for the p = 2
entropy index; every entropy-dependent routine enforces that.
"""

from __future__ import annotations

import numpy as np

from ..entropy import EntropyParams
from ..envs import RepoParams
from ..policy import QGaussian2D, normalize_level
from .params import OutOfDomainError, ParamVector, UnsupportedEntropyError


def _require_p2(entropy: EntropyParams) -> None:
    if abs(entropy.p - 2.0) > 1e-12:
        raise UnsupportedEntropyError(
            f"repo closed forms exist only for p = 2, got p = {entropy.p}"
        )


def repo_rate(params: RepoParams) -> float:
    """Exponential growth rate of alpha_star:
    sigma^2 (h-1) h / 2 + lam ((1-nu)^h - 1)."""
    h = params.h
    return float(
        0.5 * params.sigma**2 * (h - 1.0) * h
        + params.lam * ((1.0 - params.nu) ** h - 1.0)
    )


def repo_alpha_star(t, params: RepoParams):
    out = np.exp(repo_rate(params) * (params.T - np.asarray(t, dtype=float)))
    return out if out.ndim else float(out)


def _entropy_offset(prod_fourth_root: float, entropy: EntropyParams) -> float:
    """(4/3) sqrt(gamma/pi) (AB)^(1/4) - gamma, the running entropy bonus."""
    gamma = entropy.gamma
    return (4.0 / 3.0) * np.sqrt(gamma / np.pi) * prod_fourth_root - gamma


def repo_beta_star(t, params: RepoParams, entropy: EntropyParams):
    _require_p2(entropy)
    r = repo_rate(params)
    m = params.mu1**2 / (4.0 * params.A) + params.mu2**2 / (4.0 * params.B)
    t = np.asarray(t, dtype=float)
    grow = (np.exp(2.0 * r * (params.T - t)) - 1.0) / (2.0 * r)
    offset = _entropy_offset((params.A * params.B) ** 0.25, entropy)
    out = m * grow - offset * (params.T - t)
    return out if out.ndim else float(out)


def repo_value(t, x, params: RepoParams, entropy: EntropyParams):
    """V(t, x) = alpha_star(t) x^h / h + beta_star(t) for x > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise OutOfDomainError("repo states must be positive")
    a = repo_alpha_star(t, params)
    out = np.asarray(a) * x**params.h / params.h + repo_beta_star(t, params, entropy)
    return out if np.ndim(out) else float(out)


def repo_optimal_policy(t, x, params: RepoParams, entropy: EntropyParams) -> QGaussian2D:
    _require_p2(entropy)
    if x <= 0.0:
        raise OutOfDomainError("repo states must be positive")
    a_star = float(repo_alpha_star(float(t), params))
    h = params.h
    center = (
        params.mu1 * a_star / (2.0 * params.A * x**h),
        params.mu2 * a_star / (2.0 * params.B * x**h),
    )
    curvature = (params.A * x ** (2.0 * h), params.B * x ** (2.0 * h))
    return QGaussian2D(entropy, center, curvature, normalize_level(entropy, *curvature))


def repo_true_params(params: RepoParams):
    """(theta*, zeta*) reproducing the closed-form solution.

    Unlike the dark pool these live in unconstrained space (no positivity
    flags); domain violations surface as errors at evaluation time.
    """
    r = repo_rate(params)
    m = params.mu1**2 / (4.0 * params.A) + params.mu2**2 / (4.0 * params.B)
    theta = ParamVector(
        ("theta1", "theta2", "theta3"),
        [r, m / (2.0 * r), (4.0 / 3.0) * np.sqrt(1.0 / np.pi) * (params.A * params.B) ** 0.25],
        (False,) * 3,
    )
    zeta = ParamVector(
        ("zeta1", "zeta2", "zeta3", "zeta4", "zeta5"),
        [r, params.A, params.B, params.mu1 / (2.0 * params.A), params.mu2 / (2.0 * params.B)],
        (False,) * 5,
    )
    return theta, zeta


def repo_J(theta, t, x, params: RepoParams, entropy: EntropyParams):
    """J^theta(t,x) = e^{theta1 (T-t)} x^h/h + theta2 (e^{2 theta1 (T-t)} - 1)
    - (theta3 sqrt(gamma) - gamma)(T-t); broadcasts over t and x."""
    _require_p2(entropy)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise OutOfDomainError("repo states must be positive")
    z1, z2, z3 = np.asarray(theta.values, dtype=float)
    gamma = entropy.gamma
    tau = params.T - np.asarray(t, dtype=float)
    with np.errstate(over="ignore"):
        e = np.exp(z1 * tau)
    if not np.all(np.isfinite(e)):
        raise OutOfDomainError("theta1 overflows the horizon exponential")
    out = e * x**params.h / params.h + z2 * (e**2 - 1.0) - (z3 * np.sqrt(gamma) - gamma) * tau
    return out if np.ndim(out) else float(out)


def repo_zeta_tilde(zeta, params: RepoParams, entropy: EntropyParams) -> float:
    """q^zeta constant: (4/3) sqrt(gamma/pi)(zeta2 zeta3)^(1/4) - gamma.

    State-free, matching the generator of J^theta* (the certificate
    integral it zeroes is the one at x = 1).
    """
    _require_p2(entropy)
    z = np.asarray(zeta.values, dtype=float)
    if z[1] <= 0.0 or z[2] <= 0.0:
        raise OutOfDomainError("zeta2 and zeta3 must be positive")
    return float(_entropy_offset((z[1] * z[2]) ** 0.25, entropy))


def repo_q(zeta, t, x, u, params: RepoParams, entropy: EntropyParams):
    """Parameterized q-surface; broadcasts over (t, x, u) arrays."""
    zt = repo_zeta_tilde(zeta, params, entropy)
    z = np.asarray(zeta.values, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise OutOfDomainError("repo states must be positive")
    u = np.asarray(u, dtype=float)
    h = params.h
    tau = params.T - np.asarray(t, dtype=float)
    scale = np.exp(z[0] * tau) / x**h
    x2h = x ** (2.0 * h)
    out = (
        -z[1] * x2h * (u[..., 0] - z[3] * scale) ** 2
        - z[2] * x2h * (u[..., 1] - z[4] * scale) ** 2
        + zt
    )
    return out if np.ndim(out) else float(out)


def repo_psi_zeta(zeta, t, x, params: RepoParams, entropy: EntropyParams):
    """Normalizing function of q^zeta: the policy level minus zeta-tilde."""
    zt = repo_zeta_tilde(zeta, params, entropy)
    z = np.asarray(zeta.values, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise OutOfDomainError("repo states must be positive")
    gamma = entropy.gamma
    level = 2.0 * (z[1] * z[2]) ** 0.25 * np.sqrt(gamma / np.pi) * x**params.h
    out = level - zt
    return out if np.ndim(out) else float(out)


def repo_policy(zeta, t, x, params: RepoParams, entropy: EntropyParams) -> QGaussian2D:
    """Sampling policy induced by q^zeta (normalized by construction)."""
    _require_p2(entropy)
    z = np.asarray(zeta.values, dtype=float)
    if z[1] <= 0.0 or z[2] <= 0.0:
        raise OutOfDomainError("zeta2 and zeta3 must be positive")
    if x <= 0.0:
        raise OutOfDomainError("repo states must be positive")
    h = params.h
    scale = float(np.exp(z[0] * (params.T - t)) / x**h)
    center = (z[3] * scale, z[4] * scale)
    curvature = (z[1] * x ** (2.0 * h), z[2] * x ** (2.0 * h))
    return QGaussian2D(entropy, center, curvature, normalize_level(entropy, *curvature))

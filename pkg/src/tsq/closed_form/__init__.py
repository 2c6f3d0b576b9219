"""Closed-form solutions and exact parameterizations for both examples."""

from .params import OutOfDomainError, ParamVector, UnsupportedEntropyError
from .darkpool import (
    DarkPoolSolution,
    dp_alpha_ell,
    dp_alpha_star,
    dp_beta_ell,
    dp_beta_star,
    dp_J,
    dp_optimal_policy,
    dp_policy,
    dp_psi_tilde,
    dp_psi_zeta,
    dp_q,
    dp_true_params,
    dp_value_ell,
    dp_value_star,
    dp_zeta_tilde,
    w_rate,
)
from .repo import (
    repo_alpha_star,
    repo_beta_star,
    repo_J,
    repo_optimal_policy,
    repo_policy,
    repo_psi_zeta,
    repo_q,
    repo_rate,
    repo_true_params,
    repo_value,
    repo_zeta_tilde,
)

__all__ = [
    "OutOfDomainError",
    "ParamVector",
    "UnsupportedEntropyError",
    "DarkPoolSolution",
    "dp_alpha_ell",
    "dp_alpha_star",
    "dp_beta_ell",
    "dp_beta_star",
    "dp_J",
    "dp_optimal_policy",
    "dp_policy",
    "dp_psi_tilde",
    "dp_psi_zeta",
    "dp_q",
    "dp_true_params",
    "dp_value_ell",
    "dp_value_star",
    "dp_zeta_tilde",
    "w_rate",
    "repo_alpha_star",
    "repo_beta_star",
    "repo_J",
    "repo_optimal_policy",
    "repo_policy",
    "repo_psi_zeta",
    "repo_q",
    "repo_rate",
    "repo_true_params",
    "repo_value",
    "repo_zeta_tilde",
]

"""Command-line entry points: run, oracle, sample-policy, check.

Exit codes: 0 on success, 1 on validation errors (bad flags, bad config,
failed invariant checks), 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .closed_form import (
    dp_alpha_ell,
    dp_alpha_star,
    dp_beta_star,
    dp_optimal_policy,
    repo_alpha_star,
    repo_beta_star,
    repo_optimal_policy,
    repo_rate,
)
from .experiment import (
    ALGORITHMS,
    EXAMPLES,
    ConfigError,
    ExperimentConfig,
    load_config,
    preset_path,
    run_experiment,
)
from .normalizer import QSlice, policy_from_q
from .qlearn import darkpool_problem, repo_problem, value_error

ORACLE_GRID_T = 6
ORACLE_GRID_X = 3
CHECK_FD_STEP = 1e-6
CHECK_ODE_TOL = 1e-5
CHECK_MASS_TOL = 1e-9
CHECK_DENSITY_TOL = 5e-6


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors surface as ConfigError (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _load_for(args) -> ExperimentConfig:
    """Resolve --config/--example into a validated config.

    --example on its own loads the bundled preset; combined with --config
    it swaps in the preset whenever the names disagree, since the env
    section of one example cannot parameterize the other.
    """
    if getattr(args, "config", None):
        config = load_config(args.config)
        if getattr(args, "example", None) and args.example != config.example:
            config = load_config(preset_path(args.example))
        return config
    if getattr(args, "example", None):
        return load_config(preset_path(args.example))
    raise ConfigError("need --config PATH or --example NAME")


def cmd_run(args) -> int:
    config = _load_for(args)
    if args.seed is None:
        seeds = [config.seed]
    else:
        try:
            seeds = [int(s) for s in str(args.seed).split(",") if s.strip() != ""]
        except ValueError:
            raise ConfigError(
                f"--seed expects an integer or comma list, got {args.seed!r}"
            ) from None
        if not seeds:
            raise ConfigError("--seed list is empty")
    for seed in seeds:
        run_dir, state = run_experiment(
            config,
            seed=seed,
            episodes=args.episodes,
            out_root=args.out,
            algorithm=args.algorithm,
        )
        final = state.traces[-1].value_error if state.traces else float("nan")
        print(f"wrote {run_dir} (episodes {state.episode}, final value_error {final:.6g})")
    return 0


def cmd_oracle(args) -> int:
    config = _load_for(args)
    problem = config.problem()
    params, entropy = config.env_params, config.entropy
    for vec in (problem.true_theta, problem.true_zeta):
        for name, value in zip(vec.names, vec.values):
            print(f"{name} = {float(value)!r}")
    print()
    print("t,x,alpha_star,beta_star,psi_tilde")
    ts = np.linspace(0.0, params.T, args.t_points, endpoint=False)
    xs = np.linspace(0.5 * params.x0, 1.5 * params.x0, args.x_points)
    for t in ts:
        for x in xs:
            if config.example == "darkpool":
                alpha = dp_alpha_star(t, params)
                beta = dp_beta_star(t, params, entropy)
                pol = dp_optimal_policy(t, x, params, entropy)
            else:
                alpha = repo_alpha_star(t, params)
                beta = repo_beta_star(t, params, entropy)
                pol = repo_optimal_policy(t, x, params, entropy)
            psi = float("nan") if pol.level is None else float(pol.level)
            print(f"{float(t)!r},{float(x)!r},{float(alpha)!r},{float(beta)!r},{psi!r}")
    return 0


def cmd_sample_policy(args) -> int:
    config = _load_for(args)
    params, entropy = config.env_params, config.entropy
    t = args.t
    x = params.x0 if args.x is None else args.x
    if config.example == "darkpool":
        pol = dp_optimal_policy(t, x, params, entropy)
    else:
        pol = repo_optimal_policy(t, x, params, entropy)
    rng = np.random.default_rng(args.seed)
    draws = pol.sample(args.samples, rng)
    lines = ["u1,u2"] + [f"{float(u1)!r},{float(u2)!r}" for u1, u2 in draws]
    text = "\n".join(lines) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.samples} samples to {args.out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# invariant checks


def _check_riccati(example: str) -> list[tuple[str, float, float]]:
    """Residual of the closed-form value coefficient in its own ODE."""
    if example == "darkpool":
        params = darkpool_problem().env.params
        ts = np.linspace(0.02 * params.T, 0.98 * params.T, 25)
        h = CHECK_FD_STEP * params.T
        a_hi = dp_alpha_ell(ts + h, params, params.ell)
        a_lo = dp_alpha_ell(ts - h, params, params.ell)
        a = dp_alpha_ell(ts, params, params.ell)
        rhs = -a**2 / (2.0 * params.kappa) + params.lam * a + 2.0 * params.c
        resid = float(np.max(np.abs((a_hi - a_lo) / (2.0 * h) - rhs)))
        terminal = abs(dp_alpha_ell(params.T, params, params.ell) + params.ell)
    else:
        params = repo_problem().env.params
        ts = np.linspace(0.02 * params.T, 0.98 * params.T, 25)
        h = CHECK_FD_STEP * params.T
        a_hi = repo_alpha_star(ts + h, params)
        a_lo = repo_alpha_star(ts - h, params)
        a = repo_alpha_star(ts, params)
        resid = float(np.max(np.abs((a_hi - a_lo) / (2.0 * h) + repo_rate(params) * a)))
        terminal = abs(repo_alpha_star(params.T, params) - 1.0)
    return [("ode-residual", resid, CHECK_ODE_TOL), ("terminal-value", terminal, 1e-12)]


def _check_normalization(example: str) -> list[tuple[str, float, float]]:
    """Max |mass - 1| of the optimal policy over a (t, x) grid."""
    prob = darkpool_problem() if example == "darkpool" else repo_problem()
    params = prob.env.params
    worst = 0.0
    for t in np.linspace(0.0, 0.96 * params.T, 4):
        for x in np.linspace(0.5 * params.x0, 1.5 * params.x0, 3):
            pol = prob.policy(prob.true_zeta, float(t), float(x))
            mass = pol.expectation(lambda u: np.ones(len(u)))
            worst = max(worst, abs(mass - 1.0))
    return [("policy-mass", worst, CHECK_MASS_TOL)]


def _check_consistency(example: str) -> list[tuple[str, float, float]]:
    """Dual route: the numeric normalizer applied to the closed-form q
    reproduces the closed-form policy's density, and the true parameter
    vector reproduces the true value function."""
    prob = darkpool_problem() if example == "darkpool" else repo_problem()
    params = prob.env.params
    gap = 0.0
    for t, x in ((0.0, params.x0), (0.5 * params.T, 0.75 * params.x0)):
        exact = prob.policy(prob.true_zeta, t, x)
        (c1, c2), (a1, a2) = exact.center, exact.curvature
        r1 = 3.0 * np.sqrt(exact.level / a1)
        r2 = 3.0 * np.sqrt(exact.level / a2)
        slice_ = QSlice(
            evaluate=lambda u, t=t, x=x: prob.q(prob.true_zeta, t, x, u),
            search_box=((c1 - r1, c1 + r1), (c2 - r2, c2 + r2)),
        )
        solved = policy_from_q(slice_, prob.entropy)
        g1, g2 = np.meshgrid(
            np.linspace(c1 - r1, c1 + r1, 21), np.linspace(c2 - r2, c2 + r2, 21)
        )
        pts = np.column_stack([g1.ravel(), g2.ravel()])
        gap = max(gap, float(np.max(np.abs(solved.density(pts) - exact.density(pts)))))
    return [
        ("value-roundtrip", value_error(prob, prob.true_theta), 1e-10),
        ("density-roundtrip", gap, CHECK_DENSITY_TOL),
    ]


_CHECKS = (_check_riccati, _check_normalization, _check_consistency)


def cmd_check(args) -> int:
    examples = EXAMPLES if args.example in (None, "all") else (args.example,)
    failures = 0
    for example in examples:
        for fn in _CHECKS:
            for label, value, tol in fn(example):
                ok = value <= tol
                failures += 0 if ok else 1
                status = "ok" if ok else "FAIL"
                print(f"{status:>4}  {example:<9} {label:<18} max {value:.3e} (tol {tol:.0e})")
    if failures:
        print(f"{failures} check(s) failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a configured experiment, one directory per seed")
    run.add_argument("--config", help="path to a config file")
    run.add_argument("--example", choices=EXAMPLES, help="use a bundled preset instead")
    run.add_argument("--seed", help="integer or comma list; overrides the config seed")
    run.add_argument("--out", help="output root (beats TSQ_OUT_DIR and the config)")
    run.add_argument("--episodes", type=int, help="override the configured episode count")
    run.add_argument("--algorithm", choices=ALGORITHMS, help="override the configured algorithm")
    run.set_defaults(func=cmd_run)

    oracle = sub.add_parser("oracle", help="print closed-form coefficients on a (t,x) grid")
    oracle.add_argument("--config", help="path to a config file")
    oracle.add_argument("--example", choices=EXAMPLES)
    oracle.add_argument("--t-points", type=int, default=ORACLE_GRID_T, dest="t_points")
    oracle.add_argument("--x-points", type=int, default=ORACLE_GRID_X, dest="x_points")
    oracle.set_defaults(func=cmd_oracle)

    sample = sub.add_parser("sample-policy", help="draw actions from the optimal policy")
    sample.add_argument("--config", help="path to a config file")
    sample.add_argument("--example", choices=EXAMPLES)
    sample.add_argument("--t", type=float, default=0.0)
    sample.add_argument("--x", type=float, default=None, help="state (defaults to x0)")
    sample.add_argument("--samples", type=int, default=1000)
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--out", help="output file ('-' or omitted for stdout)")
    sample.set_defaults(func=cmd_sample_policy)

    check = sub.add_parser("check", help="run the invariant suite")
    check.add_argument("--example", choices=EXAMPLES + ("all",), default="all")
    check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary maps everything to exit codes
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

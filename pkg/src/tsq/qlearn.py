"""Episode-based learning loops for the value and q-function parameter maps.

Two loops share one chassis. ``algorithm1_run`` fits the parameter vectors
theta (value map J) and zeta (q-function map) by weighting their gradients
with the per-step temporal-difference residuals of simulated episodes;
under the true parameters those residuals are martingale increments, so
the updates are mean-zero exactly at the solution and the fixed point is
the optimal pair. ``algorithm2_run`` additionally carries an explicit
sampling policy, a q-Gaussian with free level, trained by stochastic
gradient ascent with two soft penalties: one pulling the policy onto the
q-function's level set, one pulling its total mass to unity.

Parameter blocks update independently. A block whose trial update leaves
the admissible domain (or whose finite-difference probes do) is skipped
for that episode and the event is recorded in the trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .closed_form import (
    OutOfDomainError,
    ParamVector,
    UnsupportedEntropyError,
    dp_J,
    dp_policy,
    dp_q,
    dp_true_params,
    dp_value_ell,
    repo_J,
    repo_policy,
    repo_q,
    repo_true_params,
    repo_value,
)
from .entropy import EntropyParams, tsallis
from .envs import DarkPoolEnv, DarkPoolParams, RepoEnv, RepoParams, rollout
from .policy import QGaussian2D, SamplingError
from .quadrature import box_rule, ellipse_jacobi_rule

# Floor applied to positivity-constrained coordinates after every update.
POSITIVITY_FLOOR = 1e-8
# Relative step for central finite differences, scaled per coordinate.
FD_REL_STEP = 1e-5
# Densities are floored here before logs / negative powers in the policy
# gradient; only reachable when a stored action has drifted out of the
# current policy's support.
DENSITY_FLOOR = 1e-12
# Per-episode cap on the relative motion of each sampling-policy coordinate.
# The score-function estimator carries an inverse boundary gap, so a single
# draw near the support edge can spike; the cap keeps such spikes inside
# the region the penalties can pull back from.
CHI_STEP_FRACTION = 0.01
CHI_STEP_SCALE = 1e-2
# Trust region for the residual-weighted blocks. Both closed-form maps
# contain fractional powers of flagged coordinates, so the exact gradient
# blows up at the positivity floor; one heavy-tailed residual there can
# catapult a coordinate beyond any schedule's ability to return. The cap
# is deliberately loose (several times the coordinate scale): ordinary
# fluctuations, including the large-rate coordinates, must pass untouched
# or the clipping itself degrades the contraction of the mean dynamics.
BLOCK_STEP_FRACTION = 5.0
BLOCK_STEP_SCALE = 2e-2

CHI_NAMES = ("center1", "center2", "curv1", "curv2", "level")
CHI_POSITIVE = (False, False, True, True, True)

DEFAULT_CHI_RATE = 0.001

__all__ = [
    "ChiFamily",
    "EpisodeTrace",
    "GradientError",
    "LearnerState",
    "MartingaleQLearner",
    "PenalizedPolicyQLearner",
    "PenaltyWeights",
    "Piece",
    "Problem",
    "Schedule",
    "F_objective",
    "algorithm1_run",
    "algorithm2_run",
    "chi_penalty_terms",
    "constant_schedules",
    "darkpool_chi_schedules",
    "darkpool_problem",
    "darkpool_schedules",
    "grad_params",
    "repo_chi_schedules",
    "repo_problem",
    "repo_schedules",
    "residuals_G",
    "value_error",
]


class GradientError(RuntimeError):
    """A finite-difference probe produced a non-finite quotient."""


# ---------------------------------------------------------------------------
# learning-rate schedules


@dataclass(frozen=True)
class Piece:
    """One contiguous block of episodes sharing a rate rule.

    ``const`` pieces use rate ``c`` throughout. ``linspace-decay`` pieces
    use c / linspace(1, b, n)[k-1] at the global episode index k, i.e.

        rate(k) = c / (1 + (b - 1) * (k - 1) / (n - 1)),

    with ``n`` defaulting to the schedule horizon.
    """

    start: int
    stop: int
    kind: str
    c: float
    b: float = 1.0
    n: int | None = None


class Schedule:
    """Per-coordinate learning rate over episodes 1..horizon."""

    def __init__(self, pieces: Sequence[Piece], horizon: int):
        pieces = tuple(pieces)
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not pieces:
            raise ValueError("schedule needs at least one piece")
        if pieces[0].start != 1 or pieces[-1].stop != horizon:
            raise ValueError("pieces must cover episodes 1..horizon")
        for prev, nxt in zip(pieces, pieces[1:]):
            if nxt.start != prev.stop + 1:
                raise ValueError("pieces must be contiguous")
        for pc in pieces:
            if pc.stop < pc.start:
                raise ValueError(f"empty piece {pc.start}..{pc.stop}")
            if pc.kind not in ("const", "linspace-decay"):
                raise ValueError(f"unknown piece kind {pc.kind!r}")
            if not np.isfinite(pc.c) or pc.c < 0.0:
                raise ValueError("rates must be finite and non-negative")
            if pc.kind == "linspace-decay":
                if not np.isfinite(pc.b) or pc.b <= 0.0:
                    raise ValueError("decay endpoint b must be positive")
                if pc.n is not None and pc.n < 1:
                    raise ValueError("decay length n must be at least 1")
        self.pieces = pieces
        self.horizon = int(horizon)
        self._rates: np.ndarray | None = None

    @classmethod
    def constant(cls, c: float, horizon: int) -> "Schedule":
        return cls([Piece(1, horizon, "const", c)], horizon)

    def rates(self) -> np.ndarray:
        """All rates as an array indexed by episode - 1."""
        if self._rates is None:
            out = np.empty(self.horizon)
            for pc in self.pieces:
                ks = np.arange(pc.start, pc.stop + 1, dtype=float)
                if pc.kind == "const":
                    seg = np.full(ks.size, pc.c)
                else:
                    n = self.horizon if pc.n is None else pc.n
                    if n > 1:
                        seg = pc.c / (1.0 + (pc.b - 1.0) * (ks - 1.0) / (n - 1.0))
                    else:
                        seg = np.full(ks.size, pc.c)
                out[pc.start - 1 : pc.stop] = seg
            self._rates = out
        return self._rates

    def rate(self, k: int) -> float:
        if not 1 <= k <= self.horizon:
            raise IndexError(f"episode {k} outside 1..{self.horizon}")
        return float(self.rates()[k - 1])


def constant_schedules(c: float, n_coords: int, horizon: int) -> tuple:
    """A uniform constant rate for every coordinate of a block."""
    return tuple(Schedule.constant(c, horizon) for _ in range(n_coords))


def _build(horizon: int, *segments) -> Schedule:
    """Assemble a schedule from (start, stop_or_None, kind, c[, b[, n]]) specs.

    Segments beyond the horizon are dropped and stops are clipped, so the
    long-run presets below stay valid for short smoke runs.
    """
    pieces = []
    for seg in segments:
        start, stop, kind, c = seg[0], seg[1], seg[2], seg[3]
        b = seg[4] if len(seg) > 4 else 1.0
        n = seg[5] if len(seg) > 5 else None
        stop = horizon if stop is None else min(stop, horizon)
        if start > horizon:
            continue
        pieces.append(Piece(start, stop, kind, c, b, n))
    return Schedule(pieces, horizon)


def darkpool_schedules(horizon: int) -> tuple[tuple, tuple]:
    """Piecewise rates for the execution example's eleven coordinates."""
    theta = (
        _build(horizon, (1, 2500, "const", 0.01), (2501, None, "linspace-decay", 0.001, 20.0)),
        _build(horizon, (1, 4000, "const", 0.005), (4001, None, "linspace-decay", 0.005, 100.0)),
        _build(horizon, (1, 4000, "const", 0.01), (4001, None, "linspace-decay", 0.005, 20.0)),
        _build(horizon, (1, 3000, "const", 0.03), (3001, None, "linspace-decay", 0.005, 20.0)),
        _build(horizon, (1, 3000, "const", 0.05), (3001, None, "linspace-decay", 0.0005, 20.0)),
    )
    stop_zeta56 = _build(
        horizon, (1, 5000, "const", 0.006), (5001, None, "linspace-decay", 0.002, 10.0)
    )
    zeta = (
        _build(horizon, (1, 3500, "const", 0.03), (3501, None, "linspace-decay", 0.00135, 10.0)),
        _build(horizon, (1, 3500, "const", 0.1), (3501, None, "linspace-decay", 0.0002, 500.0)),
        _build(
            horizon,
            (1, 2000, "const", 0.1),
            (2001, 5000, "const", 0.002),
            (5001, None, "linspace-decay", 0.0005, 20.0),
        ),
        _build(horizon, (1, 7000, "const", 0.005), (7001, None, "linspace-decay", 0.001, 100.0)),
        stop_zeta56,
        stop_zeta56,
    )
    return theta, zeta


def repo_schedules(horizon: int) -> tuple[tuple, tuple]:
    """Piecewise rates for the financing example's eight coordinates."""
    theta = (
        _build(horizon, (1, None, "linspace-decay", 0.3, 20.0)),
        _build(
            horizon,
            (1, 4000, "linspace-decay", 0.1, 100.0),
            (4001, 8000, "const", 0.0025),
            (8001, None, "const", 0.0005),
        ),
        _build(horizon, (1, 4000, "const", 0.015), (4001, None, "linspace-decay", 0.05, 20.0)),
    )
    zeta = (
        _build(horizon, (1, 2000, "const", 0.022), (2001, None, "linspace-decay", 0.005, 25.0)),
        _build(horizon, (1, 8000, "const", 0.005), (8001, None, "linspace-decay", 0.005, 20.0)),
        _build(horizon, (1, 6000, "const", 0.02), (6001, None, "linspace-decay", 0.06, 600.0)),
        _build(horizon, (1, None, "linspace-decay", 0.2, 100.0)),
        _build(
            horizon,
            (1, 5000, "linspace-decay", 0.002, 30.0),
            (5001, None, "linspace-decay", 0.0001, 50.0, 6500),
        ),
    )
    return theta, zeta


def darkpool_chi_schedules(horizon: int) -> tuple:
    return constant_schedules(DEFAULT_CHI_RATE, 5, horizon)


def repo_chi_schedules(horizon: int) -> tuple:
    return constant_schedules(DEFAULT_CHI_RATE, 5, horizon)


# ---------------------------------------------------------------------------
# residuals and gradients


def residuals_G(trajectory, J, q) -> np.ndarray:
    """Per-step temporal-difference residuals of one episode.

    G_k = J(t_{k+1}, x_{k+1}) - J(t_k, x_k) + f_k dt - q(t_k, x_k, u_k) dt,
    where the stored rewards already carry the dt factor and the final
    difference runs through J at the final stored state, so the terminal
    condition of J closes the telescope.
    """
    ts, xs = trajectory.times, trajectory.states
    j_vals = np.asarray(J(ts, xs), dtype=float)
    q_vals = np.asarray(q(ts[:-1], xs[:-1], trajectory.actions), dtype=float)
    return np.diff(j_vals) + trajectory.rewards - q_vals * np.diff(ts)


def grad_params(f, at: ParamVector, rel_step: float = FD_REL_STEP, analytic=None) -> np.ndarray:
    """Gradient of ``f`` with respect to a named parameter vector.

    Central differences with per-coordinate step rel_step * max(|value|, 1).
    A positivity-flagged coordinate sitting close enough to zero that the
    down-probe would leave the domain falls back to a forward difference.
    ``f`` may return a scalar or an array; the result stacks one leading
    axis over coordinates. A non-finite quotient raises GradientError.
    ``analytic``, when given, short-circuits the differencing entirely and
    must return the same stacked layout.
    """
    if analytic is not None:
        out = np.asarray(analytic(at), dtype=float)
        if out.shape[0] != len(at):
            raise ValueError("analytic gradient has the wrong leading dimension")
        return out
    base = at.values
    center = None
    cols = []
    for i, name in enumerate(at.names):
        h = rel_step * max(abs(base[i]), 1.0)
        up = base.copy()
        up[i] += h
        hi = np.asarray(f(at.with_values(up)), dtype=float)
        if at.positive[i] and base[i] - h <= 0.0:
            if center is None:
                center = np.asarray(f(at), dtype=float)
            quot = (hi - center) / h
        else:
            dn = base.copy()
            dn[i] -= h
            lo = np.asarray(f(at.with_values(dn)), dtype=float)
            quot = (hi - lo) / (2.0 * h)
        if not np.all(np.isfinite(quot)):
            raise GradientError(f"non-finite difference quotient in {name}")
        cols.append(quot)
    return np.stack(cols, axis=0)


# ---------------------------------------------------------------------------
# problem bundles


@dataclass(frozen=True)
class Problem:
    """Environment plus the closed-form parameter maps fitted against it.

    J(theta, t, x), q(zeta, t, x, u) and policy(zeta, t, x) are the
    parameterized value map, q-function and induced sampling policy;
    true_value(t, x) is the exact optimal value used for error traces.
    ``grad_J`` / ``grad_q`` are optional analytic gradients with the same
    stacked layout as grad_params.
    """

    name: str
    env: object
    entropy: EntropyParams
    J: Callable
    q: Callable
    policy: Callable
    true_theta: ParamVector
    true_zeta: ParamVector
    true_value: Callable
    schedule_builder: Callable
    default_steps: int
    chi_family: "ChiFamily | None" = None
    chi_schedule_builder: Callable | None = None
    grad_J: Callable | None = None
    grad_q: Callable | None = None

    @property
    def x0(self) -> float:
        return float(self.env.params.x0)

    @property
    def horizon(self) -> float:
        return float(self.env.params.T)

    def time_grid(self, n_steps: int) -> np.ndarray:
        return np.linspace(0.0, self.horizon, n_steps + 1)

    def validate_theta(self, theta: ParamVector, t_grid: np.ndarray) -> None:
        """Raise OutOfDomainError if the value map breaks anywhere on the grid."""
        vals = np.asarray(self.J(theta, t_grid, np.full_like(t_grid, self.x0)))
        if not np.all(np.isfinite(vals)):
            raise OutOfDomainError("value map is not finite on the time grid")

    def validate_zeta(self, zeta: ParamVector, t_grid: np.ndarray) -> None:
        """Raise OutOfDomainError if the q map or its policy break on the grid."""
        u0 = np.zeros((t_grid.size, 2))
        vals = np.asarray(self.q(zeta, t_grid, np.full_like(t_grid, self.x0), u0))
        if not np.all(np.isfinite(vals)):
            raise OutOfDomainError("q map is not finite on the time grid")
        self.policy(zeta, float(t_grid[0]), self.x0)

    def chi_reference(self) -> ParamVector:
        """State-free policy coordinates matching the optimal policy at t = 0."""
        if self.chi_family is None:
            raise ValueError(f"problem {self.name!r} has no sampling-policy family")
        pol = self.policy(self.true_zeta, 0.0, self.x0)
        native = np.array(
            [pol.center[0], pol.center[1], pol.curvature[0], pol.curvature[1], pol.level]
        )
        return self.chi_family.from_native(native, 0.0, self.x0)


def darkpool_problem(
    params: DarkPoolParams | None = None, entropy: EntropyParams | None = None
) -> Problem:
    """Optimal-execution example with a dark-pool jump fill."""
    if params is None:
        params = DarkPoolParams(lam=0.01, kappa=1.0, c=1.0, ell=10.0, T=0.25, x0=2.0)
    if entropy is None:
        entropy = EntropyParams(3, 0.01)
    theta, zeta = dp_true_params(params)
    chi_family = None
    if not entropy.shannon:
        # The induced policy's center and second curvature carry the
        # execution-cost decay profile, which steepens toward the horizon;
        # a time-free basis is off by up to ell / r(0) near T and the score
        # ascent then tramples the normalization penalty. The profile is
        # nearly insensitive to the q coefficients, so the basis uses the
        # unit-coefficient shape. The level rides on sqrt(a1 a2)^((p-1)/p).
        T, ell, lev_exp = params.T, params.ell, (entropy.p - 1.0) / (2.0 * entropy.p)

        def dp_scales(t, x, T=T, ell=ell, lev_exp=lev_exp):
            e = math.exp(T - t)
            rho = ((ell + 4.0) * e + ell - 4.0) / ((ell + 1.0) * e + 1.0 - ell)
            return np.array([rho * x, x, 1.0, rho, rho**lev_exp])

        chi_family = ChiFamily(entropy, dp_scales)
    return Problem(
        name="darkpool",
        env=DarkPoolEnv(params),
        entropy=entropy,
        J=partial(dp_J, params=params, entropy=entropy),
        q=partial(dp_q, params=params, entropy=entropy),
        policy=partial(dp_policy, params=params, entropy=entropy),
        true_theta=theta,
        true_zeta=zeta,
        true_value=partial(dp_value_ell, params=params, entropy=entropy, ell=params.ell),
        schedule_builder=darkpool_schedules,
        default_steps=25,
        chi_family=chi_family,
        chi_schedule_builder=darkpool_chi_schedules,
    )


def repo_problem(
    params: RepoParams | None = None, entropy: EntropyParams | None = None
) -> Problem:
    """Repo-desk financing example with power utility at the horizon."""
    if params is None:
        params = RepoParams(
            mu1=0.08, mu2=0.1, sigma=0.2, nu=0.05, lam=0.01, A=1.0, B=1.0, h=2, T=0.5, x0=2.0
        )
    if entropy is None:
        entropy = EntropyParams(2, 0.01)
    repo_value(0.0, params.x0, params, entropy)  # fail fast on unsupported entropy
    theta, zeta = repo_true_params(params)
    h = float(params.h)

    def scales(t, x):
        xh = x**h
        return np.array([1.0 / xh, 1.0 / xh, xh * xh, xh * xh, xh])

    return Problem(
        name="repo",
        env=RepoEnv(params),
        entropy=entropy,
        J=partial(repo_J, params=params, entropy=entropy),
        q=partial(repo_q, params=params, entropy=entropy),
        policy=partial(repo_policy, params=params, entropy=entropy),
        true_theta=theta,
        true_zeta=zeta,
        true_value=partial(repo_value, params=params, entropy=entropy),
        schedule_builder=repo_schedules,
        default_steps=50,
        chi_family=ChiFamily(entropy, scales),
        chi_schedule_builder=repo_chi_schedules,
    )


def value_error(problem: Problem, theta: ParamVector, at: tuple | None = None) -> float:
    """|J(theta, t, x) - optimal value| at a reference point, default (0, x0)."""
    t, x = at if at is not None else (0.0, problem.x0)
    return abs(float(problem.J(theta, t, x)) - float(problem.true_value(t, x)))


# ---------------------------------------------------------------------------
# free-level sampling policy (the chi block)


@dataclass(frozen=True)
class ChiFamily:
    """State-scaled q-Gaussian density with a free level.

    chi = (center1, center2, curv1, curv2, level) in state-free
    coordinates; ``scales(t, x)`` returns the five multipliers turning
    them into the native center / curvature / level at a given state, so
    gradients chain through a single componentwise factor.
    """

    entropy: EntropyParams
    scales: Callable

    def __post_init__(self) -> None:
        if self.entropy.shannon:
            raise UnsupportedEntropyError(
                "the free-level policy family needs p > 1 (compact support)"
            )

    def vector(self, values) -> ParamVector:
        return ParamVector(CHI_NAMES, values, CHI_POSITIVE)

    def native(self, chi: ParamVector, t: float, x: float) -> np.ndarray:
        return chi.values * self.scales(t, x)

    def from_native(self, native, t: float, x: float) -> ParamVector:
        return self.vector(np.asarray(native, dtype=float) / self.scales(t, x))

    def policy(self, chi: ParamVector, t: float, x: float) -> QGaussian2D:
        v = self.native(chi, t, x)
        return QGaussian2D(self.entropy, (v[0], v[1]), (v[2], v[3]), float(v[4]))

    def dlog_density(self, chi: ParamVector, t: float, x: float, u) -> tuple[np.ndarray, float]:
        """(d log pi / d chi, floored density) at one sampled action."""
        p, gamma = self.entropy.p, self.entropy.gamma
        alpha = 1.0 / (p - 1.0)
        sc = self.scales(t, x)
        v = chi.values * sc
        cnorm = ((p - 1.0) / (p * gamma)) ** alpha
        d1 = u[0] - v[0]
        d2 = u[1] - v[1]
        gap = v[4] - v[2] * d1 * d1 - v[3] * d2 * d2
        gap = max(gap, (DENSITY_FLOOR / cnorm) ** (p - 1.0))
        base = alpha / gap
        native = np.array(
            [
                2.0 * v[2] * d1 * base,
                2.0 * v[3] * d2 * base,
                -d1 * d1 * base,
                -d2 * d2 * base,
                base,
            ]
        )
        return native * sc, cnorm * gap**alpha


def chi_penalty_terms(
    family: ChiFamily,
    chi: ParamVector,
    t: float,
    x: float,
    q_fn: Callable,
    n_rad: int = 16,
    n_ang: int = 32,
) -> tuple[float, np.ndarray, float, np.ndarray]:
    """Level-set and mass diagnostics of the free-level policy at one state.

    Returns (F, dF/dchi, mass, dmass/dchi) where

        F = integral of (q + gamma l_p(pi)) pi du,   mass = integral of pi du,

    over the policy's elliptical support. The radial weight absorbs the
    boundary exponent 1/(p-1) - 1, so for quadratic q every integrand is a
    low-degree polynomial and the rule is exact to rounding.
    """
    p, gamma = family.entropy.p, family.entropy.gamma
    alpha = 1.0 / (p - 1.0)
    sc = family.scales(t, x)
    v = chi.values * sc
    m1, m2, a1, a2, lev = v
    cnorm = ((p - 1.0) / (p * gamma)) ** alpha
    rule = ellipse_jacobi_rule(
        (m1, m2), (np.sqrt(lev / a1), np.sqrt(lev / a2)), alpha - 1.0, n_rad, n_ang
    )
    one_minus = rule.one_minus_x
    q_vals = np.asarray(q_fn(rule.points), dtype=float)
    d1 = rule.points[:, 0] - m1
    d2 = rule.points[:, 1] - m2
    # pi^(p-1) = cnorm^(p-1) * lev * (1-s); the bracket below is
    # d/dpi of (q + gamma l_p(pi)) pi.
    pow_term = (cnorm ** (p - 1.0)) * lev * one_minus
    bracket = q_vals + gamma / (p - 1.0) - gamma * p / (p - 1.0) * pow_term
    dgap = np.stack([2.0 * a1 * d1, 2.0 * a2 * d2, -d1 * d1, -d2 * d2, np.ones_like(d1)], axis=0)
    scale_grad = cnorm * alpha * lev ** (alpha - 1.0)
    grad_f = scale_grad * (dgap * bracket) @ rule.weights
    grad_mass = scale_grad * dgap @ rule.weights
    dens_scale = cnorm * lev**alpha
    f_val = dens_scale * float(
        rule.weights @ (one_minus * (q_vals + gamma / (p - 1.0) * (1.0 - pow_term)))
    )
    mass = dens_scale * float(rule.weights @ one_minus)
    return f_val, grad_f * sc, mass, grad_mass * sc


def F_objective(t, x, q, policy, entropy: EntropyParams, box=None, n: int = 96) -> float:
    """Integral of (q + gamma l_p(policy)) policy over the action plane.

    For q-Gaussian policies the matched support rule is used; any other
    density (for example the numerically normalized ones) integrates over
    ``box`` (defaulting to the policy's stored search box) with the product
    written as (z - z**p)/(p-1) so vanishing densities contribute zero.
    """
    gamma = entropy.gamma
    if isinstance(policy, QGaussian2D):
        def integrand(pts):
            return np.asarray(q(t, x, pts), dtype=float) + gamma * tsallis(
                entropy, policy.density(pts)
            )

        return policy.expectation(integrand)
    if box is None:
        box = policy.slice.search_box
    rule = box_rule(box, n)
    dens = np.asarray(policy.density(rule.points), dtype=float)
    q_vals = np.asarray(q(t, x, rule.points), dtype=float)
    if entropy.shannon:
        with np.errstate(divide="ignore", invalid="ignore"):
            lp_mass = np.where(dens > 0.0, -dens * np.log(np.where(dens > 0.0, dens, 1.0)), 0.0)
    else:
        lp_mass = (dens - dens**entropy.p) / (entropy.p - 1.0)
    return float(rule.weights @ (q_vals * dens + gamma * lp_mass))


# ---------------------------------------------------------------------------
# training loops


@dataclass(frozen=True)
class EpisodeTrace:
    """Post-update snapshot of one episode."""

    episode: int
    params: np.ndarray
    value_error: float
    events: tuple


@dataclass
class LearnerState:
    """Final parameters plus the per-episode history of a run."""

    theta: ParamVector
    zeta: ParamVector
    chi: ParamVector | None
    episode: int
    param_names: tuple
    traces: list
    event_counts: dict
    initial_value_error: float


@dataclass(frozen=True)
class PenaltyWeights:
    """Weights of the level-set (w1) and unit-mass (w2) penalties.

    Either entry may be a callable of the episode index for annealing.
    """

    w1: float | Callable = 1.0
    w2: float | Callable = 1.0

    def at(self, episode: int) -> tuple[float, float]:
        w1 = self.w1(episode) if callable(self.w1) else self.w1
        w2 = self.w2(episode) if callable(self.w2) else self.w2
        if w1 < 0.0 or w2 < 0.0:
            raise ValueError("penalty weights must be non-negative")
        return float(w1), float(w2)


def _uniform_init(truth: ParamVector, rng) -> ParamVector:
    """Initial guess drawn coordinatewise from [0.5, 1.5] times the truth."""
    draw = truth.values * rng.uniform(0.5, 1.5, size=len(truth))
    return truth.with_values(draw).project(POSITIVITY_FLOOR)


def _check_schedules(schedules, n_coords: int, horizon: int, block: str) -> np.ndarray:
    schedules = tuple(schedules)
    if len(schedules) != n_coords:
        raise ValueError(f"{block} needs {n_coords} schedules, got {len(schedules)}")
    for s in schedules:
        if s.horizon != horizon:
            raise ValueError(f"{block} schedule horizon {s.horizon} != run horizon {horizon}")
    return np.stack([s.rates() for s in schedules])


def _clip_block_step(values, step, events, label):
    """Clip each coordinate's move to a fraction of its current scale."""
    caps = BLOCK_STEP_FRACTION * np.maximum(np.abs(values), BLOCK_STEP_SCALE)
    clipped = np.clip(step, -caps, caps)
    if not np.array_equal(clipped, step):
        events.append(label + "_step_limited")
    return clipped


def _residual_block_updates(problem, theta, zeta, traj, G, th_rates, zt_rates, t_grid, events):
    """Trial-update both residual-weighted blocks, rejecting out-of-domain moves."""
    ts, xs, us = traj.times, traj.states, traj.actions
    new_theta, new_zeta = theta, zeta
    if G is not None and th_rates.any():
        try:
            analytic = None
            if problem.grad_J is not None:
                analytic = lambda th: problem.grad_J(th, ts, xs)  # noqa: E731
            g_j = grad_params(lambda th: problem.J(th, ts, xs), theta, analytic=analytic)
            step = _clip_block_step(theta.values, th_rates * (g_j[:, :-1] @ G), events, "theta")
            trial = theta.with_values(theta.values + step)
            clamped = trial.project(POSITIVITY_FLOOR)
            if not np.array_equal(clamped.values, trial.values):
                events.append("theta_clamped")
            problem.validate_theta(clamped, t_grid)
            new_theta = clamped
        except (OutOfDomainError, GradientError):
            events.append("theta_rejected")
    if G is not None and zt_rates.any():
        try:
            analytic = None
            if problem.grad_q is not None:
                analytic = lambda z: problem.grad_q(z, ts[:-1], xs[:-1], us)  # noqa: E731
            g_q = grad_params(lambda z: problem.q(z, ts[:-1], xs[:-1], us), zeta, analytic=analytic)
            step = _clip_block_step(zeta.values, zt_rates * (g_q @ G), events, "zeta")
            trial = zeta.with_values(zeta.values + step)
            clamped = trial.project(POSITIVITY_FLOOR)
            if not np.array_equal(clamped.values, trial.values):
                events.append("zeta_clamped")
            problem.validate_zeta(clamped, t_grid)
            new_zeta = clamped
        except (OutOfDomainError, GradientError):
            events.append("zeta_rejected")
    return new_theta, new_zeta


def _episode_residuals(problem, theta, zeta, traj, events):
    """Residuals under the current parameters; None if the evaluation breaks."""
    try:
        return residuals_G(
            traj,
            lambda t, x: problem.J(theta, t, x),
            lambda t, x, u: problem.q(zeta, t, x, u),
        )
    except OutOfDomainError:
        events.append("residual_failed")
        return None


def _finish_episode(state, problem, i, events, sink):
    ve = value_error(problem, state.theta)
    parts = [state.theta.values, state.zeta.values]
    if state.chi is not None:
        parts.append(state.chi.values)
    trace = EpisodeTrace(i, np.concatenate(parts), ve, tuple(events))
    state.traces.append(trace)
    state.episode = i
    for e in events:
        state.event_counts[e] = state.event_counts.get(e, 0) + 1
    if sink is not None:
        sink(trace)


def algorithm1_run(
    problem: Problem,
    n_episodes: int,
    n_steps: int | None = None,
    rng=None,
    seed: int | None = None,
    theta0: ParamVector | None = None,
    zeta0: ParamVector | None = None,
    theta_schedules=None,
    zeta_schedules=None,
    sink: Callable | None = None,
) -> LearnerState:
    """Fit theta and zeta by residual-weighted gradient steps.

    Each episode rolls out the policy induced by the current zeta, forms
    the temporal-difference residuals G_k, and moves each block along the
    residual-weighted gradient of its own map with per-coordinate rates.
    Initial values default to a uniform [0.5, 1.5]-times-truth draw (theta
    first, then zeta, consuming the rng in that order).
    """
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    if rng is None:
        rng = np.random.default_rng(seed)
    if n_steps is None:
        n_steps = problem.default_steps
    if theta_schedules is None or zeta_schedules is None:
        built_theta, built_zeta = problem.schedule_builder(n_episodes)
        theta_schedules = theta_schedules or built_theta
        zeta_schedules = zeta_schedules or built_zeta
    theta = theta0 if theta0 is not None else _uniform_init(problem.true_theta, rng)
    zeta = zeta0 if zeta0 is not None else _uniform_init(problem.true_zeta, rng)
    th_rates = _check_schedules(theta_schedules, len(theta), n_episodes, "theta")
    zt_rates = _check_schedules(zeta_schedules, len(zeta), n_episodes, "zeta")
    t_grid = problem.time_grid(n_steps)
    problem.validate_theta(theta, t_grid)
    problem.validate_zeta(zeta, t_grid)
    state = LearnerState(
        theta=theta,
        zeta=zeta,
        chi=None,
        episode=0,
        param_names=tuple(theta.names) + tuple(zeta.names),
        traces=[],
        event_counts={},
        initial_value_error=value_error(problem, theta),
    )
    for i in range(1, n_episodes + 1):
        events: list = []
        try:
            traj = rollout(
                problem.env, lambda t, x: problem.policy(state.zeta, t, x), n_steps, rng
            )
        except (SamplingError, OverflowError, FloatingPointError):
            events.append("rollout_failed")
            _finish_episode(state, problem, i, events, sink)
            continue
        G = _episode_residuals(problem, state.theta, state.zeta, traj, events)
        state.theta, state.zeta = _residual_block_updates(
            problem,
            state.theta,
            state.zeta,
            traj,
            G,
            th_rates[:, i - 1],
            zt_rates[:, i - 1],
            t_grid,
            events,
        )
        _finish_episode(state, problem, i, events, sink)
    return state


def algorithm2_run(
    problem: Problem,
    n_episodes: int,
    n_steps: int | None = None,
    rng=None,
    seed: int | None = None,
    theta0: ParamVector | None = None,
    zeta0: ParamVector | None = None,
    chi0: ParamVector | None = None,
    theta_schedules=None,
    zeta_schedules=None,
    chi_schedules=None,
    weights: PenaltyWeights | None = None,
    sink: Callable | None = None,
    penalty_quad: tuple[int, int] = (16, 32),
) -> LearnerState:
    """Fit theta, zeta and an explicit sampling policy chi.

    Actions are drawn from the free-level policy pi^chi rather than from
    the zeta-induced policy; theta and zeta update exactly as in
    ``algorithm1_run``. chi ascends the sampled score-weighted objective
    plus two quadrature penalties: -w1 * F^2 keeps the policy on the
    q-function's zero level set, -w2 * (mass - 1)^2 keeps it a density.
    Initial draws consume the rng in the order theta, zeta, chi.
    """
    family = problem.chi_family
    if family is None:
        raise ValueError(f"problem {problem.name!r} has no sampling-policy family")
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    if rng is None:
        rng = np.random.default_rng(seed)
    if n_steps is None:
        n_steps = problem.default_steps
    if theta_schedules is None or zeta_schedules is None:
        built_theta, built_zeta = problem.schedule_builder(n_episodes)
        theta_schedules = theta_schedules or built_theta
        zeta_schedules = zeta_schedules or built_zeta
    if chi_schedules is None:
        builder = problem.chi_schedule_builder or (
            lambda n: constant_schedules(DEFAULT_CHI_RATE, len(CHI_NAMES), n)
        )
        chi_schedules = builder(n_episodes)
    if weights is None:
        weights = PenaltyWeights()
    theta = theta0 if theta0 is not None else _uniform_init(problem.true_theta, rng)
    zeta = zeta0 if zeta0 is not None else _uniform_init(problem.true_zeta, rng)
    if chi0 is not None:
        chi = chi0
    else:
        # Tighter dispersion than the theta/zeta draw: a far-off center makes
        # the sampled scores so negative that the level crashes faster than
        # the unit-mass penalty can restore it.
        ref = problem.chi_reference()
        draw = ref.values * rng.uniform(0.9, 1.1, size=len(ref))
        chi = ref.with_values(draw).project(POSITIVITY_FLOOR)
    th_rates = _check_schedules(theta_schedules, len(theta), n_episodes, "theta")
    zt_rates = _check_schedules(zeta_schedules, len(zeta), n_episodes, "zeta")
    chi_rates = _check_schedules(chi_schedules, len(chi), n_episodes, "chi")
    t_grid = problem.time_grid(n_steps)
    problem.validate_theta(theta, t_grid)
    problem.validate_zeta(zeta, t_grid)
    p, gamma = family.entropy.p, family.entropy.gamma
    n_rad, n_ang = penalty_quad
    state = LearnerState(
        theta=theta,
        zeta=zeta,
        chi=chi,
        episode=0,
        param_names=tuple(theta.names) + tuple(zeta.names) + CHI_NAMES,
        traces=[],
        event_counts={},
        initial_value_error=value_error(problem, theta),
    )
    for i in range(1, n_episodes + 1):
        events: list = []
        try:
            traj = rollout(problem.env, lambda t, x: family.policy(state.chi, t, x), n_steps, rng)
        except (SamplingError, OverflowError, FloatingPointError):
            events.append("rollout_failed")
            _finish_episode(state, problem, i, events, sink)
            continue
        G = _episode_residuals(problem, state.theta, state.zeta, traj, events)
        state.theta, state.zeta = _residual_block_updates(
            problem,
            state.theta,
            state.zeta,
            traj,
            G,
            th_rates[:, i - 1],
            zt_rates[:, i - 1],
            t_grid,
            events,
        )
        chi_r = chi_rates[:, i - 1]
        if chi_r.any():
            try:
                w1, w2 = weights.at(i)
                delta = np.zeros(len(CHI_NAMES))
                for k in range(traj.n_steps):
                    t_k = float(traj.times[k])
                    x_k = float(traj.states[k])
                    u_k = traj.actions[k]
                    dlog, dens = family.dlog_density(state.chi, t_k, x_k, u_k)
                    q_val = float(problem.q(state.zeta, t_k, x_k, u_k))
                    # q + gamma * (l_p + z l_p') evaluated at the density
                    score = q_val + gamma / (p - 1.0) * (1.0 - p * dens ** (p - 1.0))
                    delta += score * dlog
                    if w1 or w2:
                        f_val, grad_f, mass, grad_mass = chi_penalty_terms(
                            family,
                            state.chi,
                            t_k,
                            x_k,
                            lambda pts: problem.q(state.zeta, t_k, x_k, pts),
                            n_rad,
                            n_ang,
                        )
                        delta -= 2.0 * w1 * f_val * grad_f
                        delta -= 2.0 * w2 * (mass - 1.0) * grad_mass
                # the ascent direction is a time integral, so every sampled
                # term carries the grid weight
                step = chi_r * delta * traj.dt
                cap = CHI_STEP_FRACTION * np.maximum(np.abs(state.chi.values), CHI_STEP_SCALE)
                overshoot = float(np.max(np.abs(step) / cap))
                if overshoot > 1.0:
                    step /= overshoot
                    events.append("chi_step_limited")
                trial = family.vector(state.chi.values + step)
                clamped = trial.project(POSITIVITY_FLOOR)
                if not np.array_equal(clamped.values, trial.values):
                    events.append("chi_clamped")
                state.chi = clamped
            except (OutOfDomainError, GradientError):
                events.append("chi_rejected")
        _finish_episode(state, problem, i, events, sink)
    return state


# ---------------------------------------------------------------------------
# estimator-style wrappers


class MartingaleQLearner:
    """Thin estimator-style wrapper around ``algorithm1_run``."""

    def __init__(
        self,
        problem: Problem,
        n_episodes: int = 10000,
        n_steps: int | None = None,
        seed: int = 0,
        theta_schedules=None,
        zeta_schedules=None,
    ):
        self.problem = problem
        self.n_episodes = n_episodes
        self.n_steps = n_steps
        self.seed = seed
        self.theta_schedules = theta_schedules
        self.zeta_schedules = zeta_schedules

    def get_params(self, deep: bool = True) -> dict:
        return {
            "problem": self.problem,
            "n_episodes": self.n_episodes,
            "n_steps": self.n_steps,
            "seed": self.seed,
            "theta_schedules": self.theta_schedules,
            "zeta_schedules": self.zeta_schedules,
        }

    def set_params(self, **params) -> "MartingaleQLearner":
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X=None, y=None) -> "MartingaleQLearner":
        state = algorithm1_run(
            self.problem,
            self.n_episodes,
            n_steps=self.n_steps,
            seed=self.seed,
            theta_schedules=self.theta_schedules,
            zeta_schedules=self.zeta_schedules,
        )
        self.state_ = state
        self.theta_ = state.theta
        self.zeta_ = state.zeta
        self.value_error_ = state.traces[-1].value_error
        return self


class PenalizedPolicyQLearner:
    """Thin estimator-style wrapper around ``algorithm2_run``."""

    def __init__(
        self,
        problem: Problem,
        n_episodes: int = 10000,
        n_steps: int | None = None,
        seed: int = 0,
        weights: PenaltyWeights | None = None,
        theta_schedules=None,
        zeta_schedules=None,
        chi_schedules=None,
    ):
        self.problem = problem
        self.n_episodes = n_episodes
        self.n_steps = n_steps
        self.seed = seed
        self.weights = weights
        self.theta_schedules = theta_schedules
        self.zeta_schedules = zeta_schedules
        self.chi_schedules = chi_schedules

    def get_params(self, deep: bool = True) -> dict:
        return {
            "problem": self.problem,
            "n_episodes": self.n_episodes,
            "n_steps": self.n_steps,
            "seed": self.seed,
            "weights": self.weights,
            "theta_schedules": self.theta_schedules,
            "zeta_schedules": self.zeta_schedules,
            "chi_schedules": self.chi_schedules,
        }

    def set_params(self, **params) -> "PenalizedPolicyQLearner":
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X=None, y=None) -> "PenalizedPolicyQLearner":
        state = algorithm2_run(
            self.problem,
            self.n_episodes,
            n_steps=self.n_steps,
            seed=self.seed,
            weights=self.weights,
            theta_schedules=self.theta_schedules,
            zeta_schedules=self.zeta_schedules,
            chi_schedules=self.chi_schedules,
        )
        self.state_ = state
        self.theta_ = state.theta
        self.zeta_ = state.zeta
        self.chi_ = state.chi
        self.value_error_ = state.traces[-1].value_error
        return self

"""Jump-diffusion simulators for the two benchmark control problems.

Both environments expose scalar steps (state, action pair, dt, rng) ->
(next state, running-reward increment) plus a uniform-grid episode rollout.
All randomness is derived from the rng's uniform stream: Gaussians via the
inverse normal CDF and Poisson counts via CDF-table inversion, so
trajectories are bit-reproducible for a given seed regardless of generator
internals. Draw order inside a step is diffusion first, then jump.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtri

TRUNCATION_FLOOR = 1e-9
_POISSON_TAIL = 1e-16


@lru_cache(maxsize=128)
def _poisson_cdf_table(rate: float) -> np.ndarray:
    """Cumulative probabilities P(N <= k) until the tail is below 1e-16."""
    pmf = np.exp(-rate)
    cdf = [pmf]
    k = 0
    while 1.0 - cdf[-1] > _POISSON_TAIL and k < 400:
        k += 1
        pmf *= rate / k
        cdf.append(cdf[-1] + pmf)
    return np.array(cdf)


def sample_poisson(rate: float, rng, size=None):
    """Poisson draw(s) by inversion of the uniform stream."""
    if rate < 0.0:
        raise ValueError("Poisson rate must be non-negative")
    if rate == 0.0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    table = _poisson_cdf_table(float(rate))
    u = rng.random(size)
    counts = np.searchsorted(table, u, side="left")
    return int(counts) if size is None else counts.astype(np.int64)


def sample_normal(rng, size=None):
    """Standard normal draw(s) via the inverse CDF of one uniform each."""
    return ndtri(rng.random(size))


@dataclass(frozen=True)
class DarkPoolParams:
    """Inventory-liquidation problem: pure-jump execution in a dark pool."""

    lam: float  # Poisson intensity of dark-pool fills, 1/time
    kappa: float  # quadratic cost of lit-market trading speed
    c: float  # running inventory risk cost
    ell: float  # terminal penalty weight
    T: float
    x0: float

    def __post_init__(self) -> None:
        for name in ("kappa", "ell", "T"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        # zero intensity / zero running cost are legitimate degenerate pools
        if self.lam < 0.0 or self.c < 0.0:
            raise ValueError("lam and c must be non-negative")


@dataclass(frozen=True)
class RepoParams:
    """Cash-flow control via two lending channels with a default jump."""

    mu1: float  # lending rates, 1/time
    mu2: float
    sigma: float  # diffusion volatility
    nu: float  # fractional loss at a jump, < 1
    lam: float  # jump intensity
    A: float  # quadratic effort costs
    B: float
    h: float  # power-utility exponent
    T: float
    x0: float

    def __post_init__(self) -> None:
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.nu >= 1.0:
            raise ValueError("nu must be below 1")
        if self.A <= 0.0 or self.B <= 0.0:
            raise ValueError("cost weights must be positive")
        if self.lam <= 0.0 or self.T <= 0.0:
            raise ValueError("lam and T must be positive")
        if self.x0 <= 0.0:
            raise ValueError("x0 must be positive")


@dataclass(frozen=True)
class Transition:
    x_next: float
    reward_increment: float


def darkpool_step(params: DarkPoolParams, t, x, u, dt, rng) -> Transition:
    """One Euler step of the dark-pool dynamics.

    x moves by -xi*dt from lit trading and by -eta per dark-pool fill;
    the running reward is (-kappa*xi^2 - c*x^2)*dt.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    xi, eta = float(u[0]), float(u[1])
    n = sample_poisson(params.lam * dt, rng)
    x_next = x - xi * dt - eta * n
    reward = (-params.kappa * xi**2 - params.c * x**2) * dt
    return Transition(float(x_next), float(reward))


def repo_step(params: RepoParams, t, x, u, dt, rng) -> Transition:
    """One Euler step of the repo cash-flow dynamics.

    Relative growth 1 + (mu1*u1 + mu2*u2)*dt + sigma*dW - nu*dN; running
    reward -(A*u1^2 + B*u2^2)*x^(2h)*dt. A non-positive next state is the
    caller's truncation signal.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    u1, u2 = float(u[0]), float(u[1])
    w = np.sqrt(dt) * sample_normal(rng)
    n = sample_poisson(params.lam * dt, rng)
    growth = 1.0 + (params.mu1 * u1 + params.mu2 * u2) * dt + params.sigma * w - params.nu * n
    reward = -(params.A * u1**2 + params.B * u2**2) * x ** (2.0 * params.h) * dt
    return Transition(float(x * growth), float(reward))


@dataclass
class Trajectory:
    """One simulated episode on a uniform time grid.

    rewards[k] is the running-reward increment earned by the step taken at
    times[k]; the terminal reward is evaluated at the final stored state.
    """

    times: np.ndarray  # length n+1
    states: np.ndarray  # length n+1
    actions: np.ndarray  # (n, 2)
    rewards: np.ndarray  # length n
    terminal_reward: float
    truncated: bool = False

    def __post_init__(self) -> None:
        n = len(self.actions)
        if not (len(self.times) == len(self.states) == n + 1 and len(self.rewards) == n):
            raise ValueError("inconsistent trajectory lengths")
        steps = np.diff(self.times)
        if n and not np.allclose(steps, steps[0], rtol=0, atol=1e-12):
            raise ValueError("time grid is not uniform")

    @property
    def n_steps(self) -> int:
        return len(self.actions)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def total_reward(self) -> float:
        return float(self.rewards.sum() + self.terminal_reward)


class DarkPoolEnv:
    def __init__(self, params: DarkPoolParams):
        self.params = params

    def initial_state(self) -> float:
        return self.params.x0

    def step(self, t, x, u, dt, rng) -> Transition:
        return darkpool_step(self.params, t, x, u, dt, rng)

    def terminal_reward(self, x) -> float:
        return float(-self.params.ell * x**2)

    def truncates(self, x) -> bool:
        return False


class RepoEnv:
    def __init__(self, params: RepoParams):
        self.params = params

    def initial_state(self) -> float:
        return self.params.x0

    def step(self, t, x, u, dt, rng) -> Transition:
        return repo_step(self.params, t, x, u, dt, rng)

    def terminal_reward(self, x) -> float:
        return float(x**self.params.h / self.params.h)

    def truncates(self, x) -> bool:
        return x <= TRUNCATION_FLOOR


def rollout(env, policy_provider, n_steps: int, rng) -> Trajectory:
    """Simulate one episode of K = n_steps uniform Euler steps.

    policy_provider(t, x) returns the sampling distribution for the action
    at that grid point. A truncation (repo state hitting the floor) ends
    the episode early with the terminal reward taken at the floor.
    """
    if n_steps < 1:
        raise ValueError("need at least one step")
    T = env.params.T
    dt = T / n_steps
    states = [env.initial_state()]
    actions = []
    rewards = []
    truncated = False
    for k in range(n_steps):
        t_k = k * dt
        x_k = states[-1]
        policy = policy_provider(t_k, x_k)
        u = policy.sample(1, rng)[0]
        tr = env.step(t_k, x_k, u, dt, rng)
        x_next = tr.x_next
        actions.append(u)
        rewards.append(tr.reward_increment)
        if env.truncates(x_next):
            states.append(max(x_next, TRUNCATION_FLOOR))
            truncated = True
            break
        states.append(x_next)
    k_end = len(actions)
    return Trajectory(
        times=dt * np.arange(k_end + 1),
        states=np.array(states),
        actions=np.array(actions),
        rewards=np.array(rewards),
        terminal_reward=env.terminal_reward(states[-1]),
        truncated=truncated,
    )

"""Config files, trace/summary CSVs and the runner behind the CLI.

The config format is deliberately dumb: one "key = value" per line,
dotted prefixes instead of sections, '#' comments. Schedule keys repeat,
one line per piece, so the piecewise rate tables can be written down
exactly as they are used.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .entropy import EntropyParams
from .envs import DarkPoolParams, RepoParams
from .qlearn import (
    CHI_NAMES,
    DEFAULT_CHI_RATE,
    PenaltyWeights,
    Problem,
    Schedule,
    _build,
    algorithm1_run,
    algorithm2_run,
    constant_schedules,
    darkpool_problem,
    darkpool_schedules,
    repo_problem,
    repo_schedules,
)

EXAMPLES = ("darkpool", "repo")
ALGORITHMS = ("alg1", "alg2")
DEFAULT_OUT_ROOT = "runs"
OUT_DIR_ENV_VAR = "TSQ_OUT_DIR"

# config key -> dataclass field; "lambda" is a keyword so the field is lam
_DP_ENV_KEYS = {"lambda": "lam", "kappa": "kappa", "c": "c", "ell": "ell", "T": "T", "x0": "x0"}
_REPO_ENV_KEYS = {
    "lambda": "lam",
    "mu1": "mu1",
    "mu2": "mu2",
    "sigma": "sigma",
    "nu": "nu",
    "A": "A",
    "B": "B",
    "h": "h",
    "T": "T",
    "x0": "x0",
}
_THETA_NAMES = {"darkpool": tuple(f"theta{i}" for i in range(1, 6)),
                "repo": tuple(f"theta{i}" for i in range(1, 4))}
_ZETA_NAMES = {"darkpool": tuple(f"zeta{i}" for i in range(1, 7)),
               "repo": tuple(f"zeta{i}" for i in range(1, 6))}
_SEGMENT_KINDS = ("const", "linspace-decay")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


def preset_path(example: str) -> Path:
    """Path of the bundled config reproducing one of the two experiments."""
    if example not in EXAMPLES:
        raise ConfigError(f"unknown example {example!r}, expected one of {EXAMPLES}")
    here = Path(__file__).resolve().parent
    return here / "presets" / f"{example}.cfg"


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment description.

    ``schedules`` holds the rate table built at the configured episode
    count; ``schedule_segments`` keeps the raw pieces so the table can be
    rebuilt when the episode count is overridden on the command line.
    """

    example: str
    algorithm: str
    entropy: EntropyParams
    env_params: DarkPoolParams | RepoParams
    n_episodes: int
    n_steps: int
    dt: float
    seed: int
    schedules: dict[str, Schedule]
    schedule_segments: dict[str, tuple[tuple, ...]]
    penalty: PenaltyWeights
    output_dir: Path

    def problem(self) -> Problem:
        if self.example == "darkpool":
            return darkpool_problem(self.env_params, self.entropy)
        return repo_problem(self.env_params, self.entropy)

    def build_schedules(self, horizon: int):
        """(theta, zeta, chi) schedule tuples for a run of the given length.

        chi is None when the config has no explicit chi table; the runner
        then falls back to the constant default rate.
        """
        th_names, zt_names = _THETA_NAMES[self.example], _ZETA_NAMES[self.example]
        if not self.schedule_segments:
            builder = darkpool_schedules if self.example == "darkpool" else repo_schedules
            theta, zeta = builder(horizon)
            return theta, zeta, None
        theta = tuple(_build(horizon, *self.schedule_segments[n]) for n in th_names)
        zeta = tuple(_build(horizon, *self.schedule_segments[n]) for n in zt_names)
        chi = None
        if any(n in self.schedule_segments for n in CHI_NAMES):
            chi = tuple(_build(horizon, *self.schedule_segments[n]) for n in CHI_NAMES)
        return theta, zeta, chi


def _fail(lineno: int | None, msg: str) -> ConfigError:
    return ConfigError(msg if lineno is None else f"line {lineno}: {msg}")


def _to_float(raw: str, lineno: int, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise _fail(lineno, f"{key} expects a number, got {raw!r}") from None


def _to_int(raw: str, lineno: int, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise _fail(lineno, f"{key} expects an integer, got {raw!r}") from None


def _parse_segment(raw: str, lineno: int, key: str) -> tuple:
    """One schedule piece: "from,to,kind,c[,b[,n]]"; to may be "end"."""
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) < 4 or len(parts) > 6:
        raise _fail(lineno, f"{key} expects 'from,to,kind,c[,b[,n]]', got {raw!r}")
    start = _to_int(parts[0], lineno, key)
    stop = None if parts[1] == "end" else _to_int(parts[1], lineno, key)
    kind = parts[2]
    if kind not in _SEGMENT_KINDS:
        raise _fail(lineno, f"{key}: unknown rate kind {kind!r}, expected one of {_SEGMENT_KINDS}")
    c = _to_float(parts[3], lineno, key)
    seg = [start, stop, kind, c]
    if len(parts) > 4:
        seg.append(_to_float(parts[4], lineno, key))
    if len(parts) > 5:
        seg.append(_to_int(parts[5], lineno, key))
    return tuple(seg)


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file; every error carries a line number."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    scalars: dict[str, tuple[str, int]] = {}
    segments: dict[str, list[tuple]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise _fail(lineno, f"expected 'key = value', got {line.strip()!r}")
        key, _, raw = body.partition("=")
        key, raw = key.strip(), raw.strip()
        if not key or not raw:
            raise _fail(lineno, f"expected 'key = value', got {line.strip()!r}")
        if key.startswith("schedule."):
            name = key[len("schedule."):]
            segments.setdefault(name, []).append(_parse_segment(raw, lineno, key))
        else:
            if key in scalars:
                raise _fail(lineno, f"duplicate key {key!r} (first on line {scalars[key][1]})")
            scalars[key] = (raw, lineno)
    return _assemble(scalars, segments, path)


def _take(scalars: dict, key: str, required: bool = True, default: str | None = None):
    if key in scalars:
        return scalars.pop(key)
    if required:
        raise ConfigError(f"missing required key {key!r}")
    return (default, None)


def _assemble(scalars, segments, path: Path) -> ExperimentConfig:
    example, ln = _take(scalars, "example")
    if example not in EXAMPLES:
        raise _fail(ln, f"example must be one of {EXAMPLES}, got {example!r}")
    algorithm, ln = _take(scalars, "algorithm")
    if algorithm not in ALGORITHMS:
        raise _fail(ln, f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")

    env_keys = _DP_ENV_KEYS if example == "darkpool" else _REPO_ENV_KEYS
    env_kwargs = {}
    for key, field in env_keys.items():
        raw, ln = _take(scalars, f"env.{key}")
        env_kwargs[field] = _to_float(raw, ln, f"env.{key}")
    raw, ln = _take(scalars, "entropy.p")
    p = _to_float(raw, ln, "entropy.p")
    raw, ln = _take(scalars, "entropy.gamma")
    gamma = _to_float(raw, ln, "entropy.gamma")
    raw, ln = _take(scalars, "learn.episodes")
    n_episodes = _to_int(raw, ln, "learn.episodes")
    raw, ln = _take(scalars, "learn.steps")
    n_steps = _to_int(raw, ln, "learn.steps")
    raw, ln = _take(scalars, "learn.dt")
    dt = _to_float(raw, ln, "learn.dt")
    raw, ln = _take(scalars, "learn.seed", required=False, default="0")
    seed = _to_int(raw, ln, "learn.seed")
    raw, ln = _take(scalars, "penalty.w1", required=False, default="1.0")
    w1 = _to_float(raw, ln, "penalty.w1")
    raw, ln = _take(scalars, "penalty.w2", required=False, default="1.0")
    w2 = _to_float(raw, ln, "penalty.w2")
    raw, _ = _take(scalars, "output_dir", required=False, default=DEFAULT_OUT_ROOT)
    output_dir = Path(raw)
    if scalars:
        key, (_, ln) = next(iter(scalars.items()))
        raise _fail(ln, f"unknown key {key!r}")

    try:
        entropy = EntropyParams(p, gamma)
        env_params = (DarkPoolParams if example == "darkpool" else RepoParams)(**env_kwargs)
        penalty = PenaltyWeights(w1, w2)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    if n_episodes < 1:
        raise ConfigError("learn.episodes must be at least 1")
    if dt <= 0.0:
        raise ConfigError("learn.dt must be positive")
    if abs(n_steps * dt - env_params.T) > 1e-12:
        raise ConfigError(
            f"learn.steps * learn.dt = {n_steps * dt!r} does not equal env.T = {env_params.T!r}"
        )

    known = set(_THETA_NAMES[example]) | set(_ZETA_NAMES[example]) | set(CHI_NAMES)
    for name in segments:
        if name not in known:
            raise ConfigError(f"schedule.{name} does not name a {example} coordinate")
    seg_table = {}
    if segments:
        for name in _THETA_NAMES[example] + _ZETA_NAMES[example]:
            if name not in segments:
                raise ConfigError(f"schedule table is incomplete: missing schedule.{name}")
        present_chi = [n for n in CHI_NAMES if n in segments]
        if present_chi and len(present_chi) != len(CHI_NAMES):
            missing = [n for n in CHI_NAMES if n not in segments]
            raise ConfigError(f"chi schedule table is incomplete: missing {missing}")
        seg_table = {
            name: tuple(sorted(segs, key=lambda s: s[0])) for name, segs in segments.items()
        }

    config = ExperimentConfig(
        example=example,
        algorithm=algorithm,
        entropy=entropy,
        env_params=env_params,
        n_episodes=n_episodes,
        n_steps=n_steps,
        dt=dt,
        seed=seed,
        schedules={},
        schedule_segments=seg_table,
        penalty=penalty,
        output_dir=output_dir,
    )
    try:
        theta, zeta, chi = config.build_schedules(n_episodes)
    except ValueError as exc:
        raise ConfigError(f"{path}: bad schedule table: {exc}") from exc
    named = dict(zip(_THETA_NAMES[example] + _ZETA_NAMES[example], theta + zeta))
    if chi is not None:
        named.update(zip(CHI_NAMES, chi))
    config.schedules.update(named)
    return config


# ---------------------------------------------------------------------------
# trace and summary files


@dataclass(frozen=True)
class TraceRecord:
    """One episode's parameter snapshot, as written to the trace CSV."""

    episode: int
    names: tuple[str, ...]
    values: tuple[float, ...]
    value_error: float
    events: tuple[str, ...]


def trace_records(state) -> list[TraceRecord]:
    """Convert a learner state's episode traces to writable records."""
    names = tuple(state.param_names)
    return [
        TraceRecord(t.episode, names, tuple(float(v) for v in t.params), float(t.value_error),
                    tuple(t.events))
        for t in state.traces
    ]


def write_traces(records, path, param_names=None) -> None:
    """Write one CSV row per episode; repr floats round-trip exactly."""
    path = Path(path)
    if param_names is None:
        param_names = records[0].names if records else ()
    lines = [",".join(("episode", *param_names, "value_error", "events"))]
    for r in records:
        cells = [str(r.episode)]
        cells.extend(repr(v) for v in r.values)
        cells.append(repr(r.value_error))
        cells.append(";".join(r.events))
        lines.append(",".join(cells))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"could not write traces to {path}: {exc}") from exc


def read_traces(path) -> list[TraceRecord]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise OSError(f"could not read traces from {path}: {exc}") from exc
    header = lines[0].split(",")
    if header[0] != "episode" or header[-2:] != ["value_error", "events"]:
        raise ConfigError(f"{path} is not a trace file (header {lines[0]!r})")
    names = tuple(header[1:-2])
    records = []
    for line in lines[1:]:
        cells = line.split(",")
        values = tuple(float(c) for c in cells[1:-2])
        events = tuple(cells[-1].split(";")) if cells[-1] else ()
        records.append(TraceRecord(int(cells[0]), names, values, float(cells[-2]), events))
    return records


def write_summary(state, problem: Problem, path) -> None:
    """Final learnt-vs-true table, one row per theta/zeta coordinate."""
    path = Path(path)
    truth = {}
    for vec in (problem.true_theta, problem.true_zeta):
        truth.update(zip(vec.names, vec.values))
    learnt = {}
    for vec in (state.theta, state.zeta):
        learnt.update(zip(vec.names, vec.values))
    lines = ["parameter,true,learnt,abs_error"]
    for name in (*problem.true_theta.names, *problem.true_zeta.names):
        t, l = float(truth[name]), float(learnt[name])
        lines.append(f"{name},{t!r},{l!r},{abs(l - t)!r}")
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"could not write summary to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# running


def resolve_out_root(cli_out, config: ExperimentConfig) -> Path:
    """--out beats TSQ_OUT_DIR beats the config's output_dir."""
    if cli_out is not None:
        return Path(cli_out)
    env = os.environ.get(OUT_DIR_ENV_VAR)
    if env:
        return Path(env)
    return config.output_dir


def run_experiment(
    config: ExperimentConfig,
    seed: int | None = None,
    episodes: int | None = None,
    out_root=None,
    algorithm: str | None = None,
):
    """Run one seed of a configured experiment and write its artifacts.

    Returns (run_dir, state). Artifacts land in
    <out_root>/<example>-<algorithm>-seed<seed>/{traces.csv,summary.csv}.
    """
    algorithm = algorithm or config.algorithm
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    seed = config.seed if seed is None else seed
    episodes = config.n_episodes if episodes is None else episodes
    if episodes < 1:
        raise ConfigError("episode count must be at least 1")
    root = resolve_out_root(out_root, config)
    problem = config.problem()
    theta_s, zeta_s, chi_s = config.build_schedules(episodes)
    if algorithm == "alg1":
        state = algorithm1_run(
            problem,
            episodes,
            n_steps=config.n_steps,
            seed=seed,
            theta_schedules=theta_s,
            zeta_schedules=zeta_s,
        )
    else:
        if chi_s is None:
            chi_s = constant_schedules(DEFAULT_CHI_RATE, len(CHI_NAMES), episodes)
        state = algorithm2_run(
            problem,
            episodes,
            n_steps=config.n_steps,
            seed=seed,
            theta_schedules=theta_s,
            zeta_schedules=zeta_s,
            chi_schedules=chi_s,
            weights=config.penalty,
        )
    run_dir = root / f"{config.example}-{algorithm}-seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    write_traces(trace_records(state), run_dir / "traces.csv")
    write_summary(state, problem, run_dir / "summary.csv")
    return run_dir, state

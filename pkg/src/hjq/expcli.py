"""Experiment drivers and the command line interface.

Wires the benchmark systems, the critic training loop, and the tabular
solvers into seeded, reproducible runs. Every run emits learning-curve CSV
files next to a meta.json sidecar that records the full configuration, so a
curve can be regenerated from its sidecar alone.
"""

import argparse
import dataclasses
import json
import logging
import math
import subprocess
import sys as _sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .critic import MlpCritic, PolyakPair
from .dynamics import LinearQuadraticSystem, make_box, make_random_lq
from .grid_q import GridQ, QSyncSchedule, fixed_point_error_bound, q_sync_run, value_iterate
from .hjdqn import AdamState, ReplayBuffer, TrainConfig, rollout_costs, run_episode
from .lq_oracle import optimal_cost, solve_care
from .numerics import Rng

_LOG = logging.getLogger(__name__)

_BENCHMARKS = ("lq", "lq-sde", "grid-lq1d")
_ABLATION_KEYS = ("double_q", "h", "lipschitz", "smoothing", "sigma")
_CSV_HEADER = "env_step,eval_return,cost_ratio_log10,wallclock_s"

# Substream keys: critic init and env/training draws per run seed, plus a
# dedicated evaluation-state stream under the system seed.
_CRITIC_SUBKEY = 0
_RUN_SUBKEY = 1
_EVAL_SUBKEY = 100

_DISCOUNT_NOTE = (
    "the per-step factor in targets and returns is (1 - gamma*h) with "
    "gamma = -log(step_discount)/h, so step_discount = exp(-gamma*h); the "
    "cost oracle in lq_oracle discounts with exp(-gamma*k*h) instead, and "
    "the two agree to O((gamma*h)^2) per step"
)


class ConfigError(ValueError):
    """Raised for unreadable, malformed, or inconsistent experiment configs."""


# ------------------------------------------------------------------ config


@dataclass
class ExperimentConfig:
    """Everything a reproducible run depends on, in one flat record.

    ``step_discount`` is the per-step factor exp(-gamma*h); the continuous
    rate gamma is derived from it. ``hidden`` lists the critic layer widths
    and ``seeds`` the independent training runs. The ``tabular_*`` and
    ``grid_resolution`` keys drive the grid subcommands and are ignored by
    critic training.
    """

    benchmark: str = "lq"
    dim: int = 2
    h: float = 0.05
    step_discount: float = 0.99999
    lipschitz: float = 10.0
    lr: float = 1e-3
    polyak: float = 0.001
    sigma: float = 0.1
    buffer_capacity: int = 20_000
    batch_size: int = 512
    episode_len: int = 200
    total_steps: int = 50_000
    eval_interval: int = 1000
    eval_horizon: float = 20.0
    eval_points: int = 10
    smoothing: str = "none"
    double_q: bool = True
    hidden: list = field(default_factory=lambda: [256, 256])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    action_bound: float = 10.0
    state_bound: float = 10.0
    system_seed: int = 12345
    sde_sigma: float = 0.0
    grid_resolution: int = 41
    tabular_alpha: str = "harmonic"
    tabular_iters: int = 10_000
    out: str = "runs/exp"
    record_wallclock: bool = False

    def __post_init__(self):
        if self.benchmark not in _BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}; expected one of {_BENCHMARKS}")
        if self.dim < 1:
            raise ConfigError("dim must be at least 1")
        if self.benchmark == "grid-lq1d" and self.dim != 1:
            raise ConfigError("benchmark 'grid-lq1d' is one dimensional; set dim = 1")
        if not 0.0 < self.step_discount < 1.0:
            raise ConfigError("step_discount must lie strictly between 0 and 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be nonnegative")
        if self.episode_len < 1:
            raise ConfigError("episode_len must be positive")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be positive")
        if self.eval_horizon <= 0:
            raise ConfigError("eval_horizon must be positive")
        if self.eval_points < 1:
            raise ConfigError("eval_points must be positive")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden layer widths must be positive")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.action_bound <= 0 or self.state_bound <= 0:
            raise ConfigError("state_bound and action_bound must be positive")
        if self.sde_sigma < 0:
            raise ConfigError("sde_sigma must be nonnegative")
        if self.sde_sigma > 0 and self.benchmark != "lq-sde":
            raise ConfigError("sde_sigma applies only to the lq-sde benchmark")
        if self.grid_resolution < 2:
            raise ConfigError("grid_resolution must be at least 2")
        if self.tabular_iters < 1:
            raise ConfigError("tabular_iters must be positive")
        if self.tabular_alpha != "harmonic":
            try:
                alpha = float(self.tabular_alpha)
            except ValueError:
                raise ConfigError("tabular_alpha must be 'harmonic' or a constant in (0, 1]") from None
            if not 0.0 < alpha <= 1.0:
                raise ConfigError("tabular_alpha must be 'harmonic' or a constant in (0, 1]")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def gamma(self) -> float:
        return -math.log(self.step_discount) / self.h

    @property
    def n_episodes(self) -> int:
        return -(-self.total_steps // self.episode_len)

    def train_config(self, action_box=None):
        """The per-run training constants implied by this experiment."""
        return TrainConfig(
            h=self.h,
            lipschitz=self.lipschitz,
            gamma=self.gamma,
            lr=self.lr,
            polyak=self.polyak,
            sigma=self.sigma,
            buffer_capacity=self.buffer_capacity,
            batch_size=self.batch_size,
            episode_len=self.episode_len,
            n_episodes=self.n_episodes,
            smoothing=self.smoothing,
            double_q=self.double_q,
            action_box=action_box,
        )


_BOOL_KEYS = frozenset({"double_q", "record_wallclock"})
_INT_KEYS = frozenset(
    {
        "dim",
        "buffer_capacity",
        "batch_size",
        "episode_len",
        "total_steps",
        "eval_interval",
        "eval_points",
        "system_seed",
        "grid_resolution",
        "tabular_iters",
    }
)
_FLOAT_KEYS = frozenset(
    {
        "h",
        "step_discount",
        "lipschitz",
        "lr",
        "polyak",
        "sigma",
        "eval_horizon",
        "action_bound",
        "state_bound",
        "sde_sigma",
    }
)
_INT_LIST_KEYS = frozenset({"hidden", "seeds"})
_STR_KEYS = frozenset({"benchmark", "smoothing", "tabular_alpha", "out"})
_ALL_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _INT_LIST_KEYS | _STR_KEYS


def _parse_value(key: str, raw: str):
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        raise ConfigError(f"key '{key}' expects true or false, got {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _INT_LIST_KEYS:
            return [int(tok.strip()) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"key '{key}' expects a number, got {raw!r}") from None
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path) -> ExperimentConfig:
    """Parse a flat `key = value` config file.

    Lines are `key = value` pairs with `#` starting a comment; unset keys
    take their documented defaults. Unknown keys, duplicate keys, untyped
    values, and invariant violations all raise ConfigError, parse problems
    with the offending line number.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, raw = body.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        if not raw:
            raise ConfigError(f"{path}:{lineno}: empty value for {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return ExperimentConfig(**values)


def save_config(cfg: ExperimentConfig, path) -> None:
    """Write a config file that load_config parses back to an equal config."""
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")


# -------------------------------------------------------------- benchmarks


def make_system(cfg: ExperimentConfig) -> LinearQuadraticSystem:
    """Instantiate the configured benchmark system.

    "lq" and "lq-sde" draw a random unstable system from the system seed
    (the same seed gives the same plant across training seeds); "grid-lq1d"
    is the fixed scalar benchmark on unit boxes used by the grid solvers.
    """
    if cfg.benchmark == "grid-lq1d":
        return LinearQuadraticSystem(
            a_mat=np.array([[0.5]]),
            b_mat=np.array([[1.0]]),
            q_cost=np.eye(1),
            r_cost=np.eye(1),
            gamma=cfg.gamma,
            state_box=make_box(-1.0, 1.0, 1),
            action_box=make_box(-1.0, 1.0, 1),
        )
    noise = cfg.sde_sigma if cfg.benchmark == "lq-sde" else 0.0
    return make_random_lq(
        cfg.dim,
        Rng(cfg.system_seed),
        cfg.gamma,
        state_bound=cfg.state_bound,
        action_bound=cfg.action_bound,
        noise=noise,
    )


def eval_states(cfg: ExperimentConfig, sys):
    """The fixed evaluation initial conditions: uniform states, zero actions."""
    rng = Rng(cfg.system_seed, (_EVAL_SUBKEY,))
    x0s = rng.uniform(sys.state_box[:, 0], sys.state_box[:, 1], (cfg.eval_points, sys.state_dim))
    a0s = np.zeros((cfg.eval_points, sys.action_dim))
    return x0s, a0s


# ------------------------------------------------------------ training runs


@dataclass
class CurvePoint:
    """One evaluation snapshot along a training run."""

    env_step: int
    eval_return: float
    cost_ratio_log10: float
    wallclock_s: float


def _policy_metrics(sys, critic, tcfg, x0s, a0s, horizon, riccati):
    """Mean greedy-rollout return and mean log10 cost ratio over eval states."""
    costs = rollout_costs(sys, critic, x0s, a0s, tcfg, horizon)
    optimal = np.array([optimal_cost(riccati, x0) for x0 in x0s])
    with np.errstate(divide="ignore"):
        ratios = np.log10(costs / optimal)
    return float(np.mean(-costs)), float(ratios.mean())


def _run_seed(sys, cfg, tcfg, seed, x0s, a0s, riccati):
    tcfg = dataclasses.replace(tcfg, seed=seed)
    critic = MlpCritic.init_random(
        sys.state_dim, sys.action_dim, Rng(seed, (_CRITIC_SUBKEY,)), hidden=tuple(cfg.hidden)
    )
    pair = PolyakPair.create(critic)
    buffer = ReplayBuffer(cfg.buffer_capacity, sys.state_dim, sys.action_dim, cfg.h)
    adam = AdamState.for_critic(pair.online)
    rng = Rng(seed, (_RUN_SUBKEY,))
    start = time.perf_counter()

    def snapshot(step):
        # wallclock stays 0.0 unless asked for, keeping CSV bytes reproducible
        elapsed = time.perf_counter() - start if cfg.record_wallclock else 0.0
        ret, ratio = _policy_metrics(sys, pair.online, tcfg, x0s, a0s, cfg.eval_horizon, riccati)
        return CurvePoint(step, ret, ratio, elapsed)

    points = [snapshot(0)]
    steps = 0
    next_eval = cfg.eval_interval
    for _ in range(tcfg.n_episodes):
        run_episode(sys, pair, buffer, tcfg, rng, adam)
        steps += cfg.episode_len
        if steps >= next_eval:
            points.append(snapshot(steps))
            next_eval = (steps // cfg.eval_interval + 1) * cfg.eval_interval
    if steps > 0 and points[-1].env_step != steps:
        points.append(snapshot(steps))
    return points


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Train every configured seed and write curves, metadata, and summary.

    Each seed owns all of its state; a failing seed is recorded in the
    summary and the remaining seeds still run. Returns the curves keyed by
    seed (failed seeds absent). Output lands in ``out_dir`` (default: the
    config's ``out``): one CSV per seed, meta.json, and summary.json.
    """
    out = Path(out_dir if out_dir is not None else cfg.out)
    sys = make_system(cfg)
    riccati = solve_care(sys)
    tcfg = cfg.train_config(action_box=sys.action_box)
    x0s, a0s = eval_states(cfg, sys)
    curves = {}
    failures = {}
    for seed in cfg.seeds:
        try:
            curves[seed] = _run_seed(sys, cfg, tcfg, seed, x0s, a0s, riccati)
            _LOG.info(
                "seed %d: final cost_ratio_log10 %.4f", seed, curves[seed][-1].cost_ratio_log10
            )
        except Exception as exc:
            failures[seed] = f"{type(exc).__name__}: {exc}"
            _LOG.warning("seed %d failed: %s", seed, failures[seed])
    meta = build_meta(cfg)
    if curves:
        write_csv(curves, out, meta=meta)
    else:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "meta.json", meta)
    summary = summarize(curves)
    summary["failures"] = {str(seed): msg for seed, msg in sorted(failures.items())}
    _write_json(out / "summary.json", summary)
    return curves


def summarize(curves: dict) -> dict:
    """Median and half standard deviation of the final metric across seeds."""
    finals = [pts[-1].cost_ratio_log10 for pts in curves.values()]
    initials = [pts[0].cost_ratio_log10 for pts in curves.values()]
    summary = {
        "n_seeds": len(curves),
        "final_per_seed": {str(seed): pts[-1].cost_ratio_log10 for seed, pts in sorted(curves.items())},
        "final_median": float(np.median(finals)) if finals else None,
        "final_half_std": 0.5 * float(np.std(finals)) if finals else None,
        "initial_median": float(np.median(initials)) if initials else None,
    }
    return summary


# ---------------------------------------------------------------- emission


def _fmt(value) -> str:
    # repr of a float is the shortest round-trip form; inf prints as 'inf'
    return repr(float(value))


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n")


def _git_describe() -> str:
    try:
        proc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
            cwd=Path(__file__).resolve().parent,
        )
    except OSError:
        return "unknown"
    return proc.stdout.strip() if proc.returncode == 0 else "unknown"


def build_meta(cfg: ExperimentConfig) -> dict:
    """The sidecar record: full config plus the conventions behind the numbers."""
    return {
        "config": {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)},
        "gamma": cfg.gamma,
        "git": _git_describe(),
        "discount_note": _DISCOUNT_NOTE,
        "evaluation": {
            "state_subkey": _EVAL_SUBKEY,
            "states": "uniform over state_box from Rng(system_seed, (state_subkey,))",
            "initial_action": "zeros",
            "points": cfg.eval_points,
            "horizon_s": cfg.eval_horizon,
            "rollout": "greedy, noise free drift, states clipped to state_box",
        },
    }


def write_csv(curves: dict, path, meta=None) -> None:
    """Write one `curve_seed<k>.csv` per seed, plus meta.json when given.

    Rows are `env_step,eval_return,cost_ratio_log10,wallclock_s` with floats
    in shortest round-trip form (non-finite values as `inf`/`-inf`/`nan`),
    so identical curves produce identical bytes on any platform.
    """
    if not curves:
        raise ValueError("no curves to write")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for seed in sorted(curves):
        points = curves[seed]
        steps = [p.env_step for p in points]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("env_step must be strictly increasing within a curve")
        lines = [_CSV_HEADER]
        lines += [
            f"{p.env_step},{_fmt(p.eval_return)},{_fmt(p.cost_ratio_log10)},{_fmt(p.wallclock_s)}"
            for p in points
        ]
        (path / f"curve_seed{seed}.csv").write_text("\n".join(lines) + "\n")
    if meta is not None:
        _write_json(path / "meta.json", meta)


# --------------------------------------------------------------- ablations


def run_ablation(cfg: ExperimentConfig, vary: str, values, out_dir=None) -> dict:
    """Run one experiment per value of a single varied key.

    Everything except the varied key is bit-identical across arms, with one
    deliberate exception: when ``h`` varies, the learning rate is scaled by
    the same factor. Each arm lands in ``<out>/<key>=<value>/``; the
    cross-arm summary goes to ablation_summary.json.
    """
    if vary not in _ABLATION_KEYS:
        raise ConfigError(f"cannot vary {vary!r}; choose from {_ABLATION_KEYS}")
    out_root = Path(out_dir if out_dir is not None else cfg.out)
    results = {}
    for value in values:
        arm = dataclasses.replace(cfg, **{vary: value})
        if vary == "h":
            arm = dataclasses.replace(arm, lr=cfg.lr * value / cfg.h)
        label = f"{vary}={_format_value(value)}"
        results[label] = run_experiment(arm, out_dir=out_root / label)
    summary = {label: summarize(curves) for label, curves in results.items()}
    _write_json(out_root / "ablation_summary.json", summary)
    return results


# -------------------------------------------------------------------- CLI


def _add_common_flags(parser):
    parser.add_argument("--config", required=True, help="path to the experiment config file")
    parser.add_argument("--seed", type=int, default=None, help="replace the seed list with this single seed")
    parser.add_argument("--out", default=None, help="output directory, overriding the config")
    parser.add_argument("--steps", type=int, default=None, help="iteration budget, overriding the config")


_TRAIN_FLAG_KEYS = (
    "h",
    "step_discount",
    "lipschitz",
    "lr",
    "polyak",
    "sigma",
    "buffer_capacity",
    "batch_size",
    "episode_len",
    "smoothing",
    "double_q",
    "action_bound",
)


def _add_train_flags(parser):
    for key in _TRAIN_FLAG_KEYS:
        parser.add_argument(
            f"--{key.replace('_', '-')}",
            dest=f"cfg_{key}",
            default=None,
            metavar="V",
            help=f"override config key '{key}'",
        )


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="hjq",
        description="Continuous-time Q-learning experiment driver.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    riccati = commands.add_parser("riccati", help="solve the benchmark Riccati equation")
    grid = commands.add_parser("grid-solve", help="grid fixed point of the step operator")
    tabular = commands.add_parser("qlearn-tabular", help="damped synchronous updates on the grid")
    train = commands.add_parser("train-hjdqn", help="train critics across seeds")
    ablate = commands.add_parser("ablate", help="rerun the experiment varying one key")
    for sub in (riccati, grid, tabular, train, ablate):
        _add_common_flags(sub)
    for sub in (train, ablate):
        _add_train_flags(sub)
    ablate.add_argument("--vary", required=True, help=f"key to vary, one of {_ABLATION_KEYS}")
    ablate.add_argument("--values", required=True, help="comma separated values for the varied key")
    return parser


def _apply_overrides(cfg, args, steps_key="total_steps"):
    updates = {}
    for key in _TRAIN_FLAG_KEYS:
        raw = getattr(args, f"cfg_{key}", None)
        if raw is not None:
            updates[key] = _parse_value(key, raw)
    if args.seed is not None:
        updates["seeds"] = [args.seed]
    if args.out is not None:
        updates["out"] = args.out
    if args.steps is not None:
        updates[steps_key] = args.steps
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _cmd_riccati(cfg, args):
    sol = solve_care(make_system(cfg))
    payload = {"gamma": cfg.gamma, "p_mat": sol.p_mat.tolist(), "residual": sol.residual}
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "riccati.json", payload)
    return 0


def _grid_benchmark(cfg, command):
    if cfg.benchmark != "grid-lq1d":
        raise ConfigError(f"{command} requires the grid-lq1d benchmark")
    return make_system(cfg)


def _cmd_grid_solve(cfg, args):
    sys = _grid_benchmark(cfg, "grid-solve")
    resolution = (cfg.grid_resolution,) * 2
    history = []
    q = value_iterate(
        GridQ.zeros(sys.state_box, sys.action_box, resolution),
        sys,
        cfg.h,
        cfg.lipschitz,
        tol=1e-10,
        history=history,
    )
    bound = fixed_point_error_bound(history[-1], cfg.gamma, cfg.h)
    print(f"fixed point after {len(history)} sweeps, residual {history[-1]:.3e}, error bound {bound:.3e}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        np.save(out / "q_values.npy", q.values.reshape(resolution))
        _write_json(
            out / "grid_solution.json",
            {
                "residual": history[-1],
                "error_bound": bound,
                "sweeps": len(history),
                "resolution": list(resolution),
                "h": cfg.h,
                "gamma": cfg.gamma,
                "lipschitz": cfg.lipschitz,
            },
        )
    return 0


def _cmd_tabular(cfg, args):
    sys = _grid_benchmark(cfg, "qlearn-tabular")
    resolution = (cfg.grid_resolution,) * 2
    zeros = GridQ.zeros(sys.state_box, sys.action_box, resolution)
    q_ref = value_iterate(zeros, sys, cfg.h, cfg.lipschitz, tol=1e-10)
    if cfg.tabular_alpha == "harmonic":
        schedule = QSyncSchedule(kind="harmonic")
    else:
        schedule = QSyncSchedule(kind="constant", value=float(cfg.tabular_alpha))
    result = q_sync_run(zeros, sys, cfg.h, cfg.lipschitz, schedule, cfg.tabular_iters, q_ref=q_ref)
    final_error = float(result["errors"][-1])
    print(
        f"{cfg.tabular_iters} updates with alpha={cfg.tabular_alpha}: "
        f"sup error {final_error:.3e} (bound {result['bounds'][-1]:.3e})"
    )
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["iter,sup_residual,sup_error_to_fixed_point,bound"]
        lines += [
            f"{k},{_fmt(result['residuals'][k])},{_fmt(result['errors'][k])},{_fmt(result['bounds'][k])}"
            for k in range(cfg.tabular_iters)
        ]
        (out / "tabular.csv").write_text("\n".join(lines) + "\n")
        _write_json(
            out / "tabular_summary.json",
            {
                "final_error": final_error,
                "final_bound": float(result["bounds"][-1]),
                "iterations": cfg.tabular_iters,
                "alpha": cfg.tabular_alpha,
                "sum_diverges": schedule.sum_diverges,
            },
        )
    return 0


def _exit_code(cfg, curves):
    # any failed seed or non-finite final metric marks the run as diverged
    if set(cfg.seeds) - set(curves):
        return 3
    finals = [pts[-1].cost_ratio_log10 for pts in curves.values()]
    return 0 if all(math.isfinite(v) for v in finals) else 3


def _cmd_train(cfg, args):
    curves = run_experiment(cfg)
    summary = summarize(curves)
    for seed in sorted(curves):
        print(f"seed {seed}: final cost_ratio_log10 {curves[seed][-1].cost_ratio_log10:.4f}")
    if summary["final_median"] is not None:
        print(f"median {summary['final_median']:.4f} +- {summary['final_half_std']:.4f} (half std)")
    return _exit_code(cfg, curves)


def _cmd_ablate(cfg, args):
    values = [_parse_value(args.vary, tok.strip()) for tok in args.values.split(",") if tok.strip()]
    if not values:
        raise ConfigError("--values must list at least one value")
    results = run_ablation(cfg, args.vary, values)
    code = 0
    for label, curves in results.items():
        summary = summarize(curves)
        median = summary["final_median"]
        print(f"{label}: median final {median:.4f}" if median is not None else f"{label}: all seeds failed")
        code = max(code, _exit_code(cfg, curves))
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    steps_key = "tabular_iters" if args.command == "qlearn-tabular" else "total_steps"
    try:
        cfg = _apply_overrides(load_config(args.config), args, steps_key=steps_key)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2
    handlers = {
        "riccati": _cmd_riccati,
        "grid-solve": _cmd_grid_solve,
        "qlearn-tabular": _cmd_tabular,
        "train-hjdqn": _cmd_train,
        "ablate": _cmd_ablate,
    }
    try:
        return handlers[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())

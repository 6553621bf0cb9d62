"""Deep continuous-time Q-learning with Lipschitz action increments.

The learner regresses a critic on semi-discrete targets
``y = h r + (1 - gamma h) Q_target(x_next, a + increment)`` where the
increment steps at rate L along the critic's action gradient. Exploration
adds Gaussian noise to the same increment; evaluation rolls the noise-free
greedy policy. All randomness flows through explicitly seeded generators.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .critic import polyak_update
from .dynamics import (
    LinearQuadraticSystem,
    clip_to_box,
    step_exact,
    step_sde,
)
from .lq_oracle import DIVERGENCE_LIMIT
from .numerics import Rng, adam_update

_LOG = logging.getLogger(__name__)
_GRAD_FLOOR = 1e-12
_SMOOTHING_MODES = ("none", "tanh", "rational")
_BALL_SEED = 314159


@dataclass
class Transition:
    """One environment step sampled at the buffer's fixed interval."""

    x: np.ndarray
    a: np.ndarray
    r: float
    x_next: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform batch sampling."""

    def __init__(self, capacity, state_dim, action_dim, h):
        capacity = int(capacity)
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.h = float(h)
        self._xs = np.zeros((capacity, state_dim))
        self._acts = np.zeros((capacity, action_dim))
        self._rs = np.zeros(capacity)
        self._x_nexts = np.zeros((capacity, state_dim))
        self._cursor = 0
        self._count = 0

    def __len__(self):
        return self._count

    def push(self, x, a, r, x_next):
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        x_next = np.asarray(x_next, dtype=float)
        if not (np.isfinite(x).all() and np.isfinite(a).all()
                and math.isfinite(r) and np.isfinite(x_next).all()):
            raise ValueError("non-finite transition")
        i = self._cursor
        self._xs[i] = x
        self._acts[i] = a
        self._rs[i] = r
        self._x_nexts[i] = x_next
        self._cursor = (i + 1) % self.capacity
        self._count = min(self._count + 1, self.capacity)

    def __getitem__(self, i):
        """Stored transitions in age order: index 0 is the oldest."""
        if not 0 <= i < self._count:
            raise IndexError(i)
        if self._count == self.capacity:
            i = (self._cursor + i) % self.capacity
        return Transition(
            self._xs[i].copy(), self._acts[i].copy(),
            float(self._rs[i]), self._x_nexts[i].copy(),
        )

    def sample_arrays(self, batch_size, rng):
        """Uniform sample with replacement, returned as stacked arrays."""
        if batch_size > self._count:
            raise ValueError("buffer has fewer transitions than batch size")
        idx = rng.integers(0, self._count, int(batch_size))
        return self._xs[idx], self._acts[idx], self._rs[idx], self._x_nexts[idx]


@dataclass
class TrainConfig:
    """Algorithmic constants of one training run.

    ``action_box`` bounds every executed and target action ((m,2) rows of
    low/high); None leaves actions unconstrained.
    """

    h: float
    lipschitz: float
    gamma: float
    lr: float = 1e-3
    polyak: float = 0.001
    sigma: float = 0.1
    buffer_capacity: int = 20_000
    batch_size: int = 512
    episode_len: int = 200
    n_episodes: int = 250
    smoothing: str = "none"
    double_q: bool = True
    seed: int = 0
    action_box: np.ndarray = None

    def __post_init__(self):
        if not (math.isfinite(self.h) and self.h > 0):
            raise ValueError("h must be positive and finite")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.h >= 1.0 / self.gamma:
            raise ValueError("need h < 1/gamma for a positive step discount")
        if self.lipschitz <= 0:
            raise ValueError("lipschitz must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.polyak <= 1.0:
            raise ValueError("polyak must be in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must cover one batch")
        if self.episode_len < 0:
            raise ValueError("episode_len must be nonnegative")
        if self.n_episodes < 0:
            raise ValueError("n_episodes must be nonnegative")
        if self.smoothing not in _SMOOTHING_MODES:
            raise ValueError(f"smoothing must be one of {_SMOOTHING_MODES}")
        if self.action_box is not None:
            self.action_box = np.asarray(self.action_box, dtype=float)
            if self.action_box.ndim != 2 or self.action_box.shape[1] != 2:
                raise ValueError("action_box must have shape (m, 2)")

    @property
    def step_discount(self):
        return 1.0 - self.gamma * self.h


@dataclass
class AdamState:
    """Optimizer moments for the online critic's flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0

    @classmethod
    def for_critic(cls, critic):
        return cls(m=np.zeros(critic.num_params), v=np.zeros(critic.num_params))


# ------------------------------------------------------------ greedy increments

def _phi(mode, rho, lipschitz):
    """Gradient-magnitude damping factor; identity for mode 'none'."""
    if mode == "none":
        return np.ones_like(rho)
    if mode == "tanh":
        return np.tanh(rho / lipschitz)
    return rho / (lipschitz + rho)


def _increments_from_grads(grads, cfg):
    grads = np.atleast_2d(grads)
    norms = np.linalg.norm(grads, axis=1)
    dirs = np.zeros_like(grads)
    ok = norms >= _GRAD_FLOOR
    dirs[ok] = grads[ok] / norms[ok, None]
    dirs[~ok, 0] = 1.0
    scale = cfg.h * cfg.lipschitz * _phi(cfg.smoothing, norms, cfg.lipschitz)
    return scale[:, None] * dirs


def greedy_increment_many(critic, xs, acts, cfg):
    return _increments_from_grads(critic.grad_action_many(xs, acts), cfg)


def greedy_increment(critic, x, a, cfg):
    """h L phi(|g|) g/|g| with g the critic's action gradient at (x, a).

    Near-zero gradients fall back to the first canonical direction. Needs
    only a scalar grad_action, so any critic adapter qualifies.
    """
    g = critic.grad_action(np.asarray(x, dtype=float), np.asarray(a, dtype=float))
    return _increments_from_grads(np.asarray(g, dtype=float), cfg)[0]


def _clip_actions(acts, box):
    if box is None:
        return acts
    return np.clip(acts, box[:, 0], box[:, 1])


# ------------------------------------------------------------ targets

def target_values(pair, xs, acts, rs, x_nexts, cfg):
    """Batched regression targets with the target critic frozen."""
    grad_critic = pair.online if cfg.double_q else pair.target
    incs = greedy_increment_many(grad_critic, xs, acts, cfg)
    a_plus = _clip_actions(np.atleast_2d(acts) + incs, cfg.action_box)
    q_next = pair.target.forward_many(x_nexts, a_plus)
    return cfg.h * np.asarray(rs, dtype=float) + cfg.step_discount * q_next


def target_value(pair, transition, cfg):
    return float(
        target_values(
            pair, [transition.x], [transition.a], [transition.r],
            [transition.x_next], cfg,
        )[0]
    )


def act(critic, x, a_prev, cfg, rng):
    """Exploration step: greedy increment plus Gaussian noise, clipped."""
    a_prev = np.asarray(a_prev, dtype=float)
    inc = greedy_increment(critic, x, a_prev, cfg)
    noise = cfg.sigma * rng.standard_normal(a_prev.size) if cfg.sigma > 0 else 0.0
    return _clip_actions(np.atleast_2d(a_prev + inc + noise), cfg.action_box)[0]


# ------------------------------------------------------------ training

def train_step(pair, buffer, cfg, rng, adam):
    """One uniform batch, one Adam step on the online critic, one blend."""
    xs, acts, rs, x_nexts = buffer.sample_arrays(cfg.batch_size, rng)
    cache = pair.online.forward_cache(xs, acts)
    if cfg.double_q:
        grads = pair.online.grad_action_from_cache(cache)
    else:
        grads = pair.target.grad_action_many(xs, acts)
    incs = _increments_from_grads(grads, cfg)
    a_plus = _clip_actions(acts + incs, cfg.action_box)
    ys = cfg.h * rs + cfg.step_discount * pair.target.forward_many(x_nexts, a_plus)
    loss, grad_flat = pair.online.loss_grad_from_cache(cache, ys)
    adam.step_count += 1
    params, adam.m, adam.v = adam_update(
        pair.online.get_flat(), grad_flat, adam.m, adam.v, adam.step_count, cfg.lr
    )
    pair.online.set_flat(params)
    polyak_update(pair, cfg.polyak)
    return loss


def _env_step(sys, x, a, h, rng):
    if getattr(sys, "diffusion", None) is not None:
        return step_sde(sys, x, a, h, rng)
    return step_exact(sys, x, a, h)


def initial_state_action(sys, rng):
    """Uniform draw over the state and action boxes."""
    x0 = rng.uniform(sys.state_box[:, 0], sys.state_box[:, 1])
    a0 = rng.uniform(sys.action_box[:, 0], sys.action_box[:, 1])
    return x0, a0


def run_episode(sys, pair, buffer, cfg, rng, adam):
    """One episode of interleaved acting and training.

    Environment states are clipped into the system's state box after each
    transition (compact benchmark domain); a non-finite or exploding raw
    state aborts the episode. Returns sum_k (1-gamma h)^k h r_k.
    """
    x, a = initial_state_action(sys, rng)
    ret = 0.0
    disc = 1.0
    for _ in range(cfg.episode_len):
        r = float(sys.reward(x, a))
        x_raw = _env_step(sys, x, a, cfg.h, rng)
        if not np.isfinite(x_raw).all() or np.abs(x_raw).max() > DIVERGENCE_LIMIT:
            _LOG.warning("episode aborted: state diverged")
            break
        x_next = clip_to_box(sys, x_raw)
        buffer.push(x, a, r, x_next)
        if len(buffer) >= cfg.batch_size:
            train_step(pair, buffer, cfg, rng, adam)
        ret += disc * cfg.h * r
        disc *= cfg.step_discount
        a = act(pair.online, x, a, cfg, rng)
        x = x_next
    return ret


# ------------------------------------------------------------ evaluation

def rollout_greedy(sys, critic, x0, a0, cfg, horizon, clip_state=True):
    """Noise-free greedy rollout: trajectory arrays and discounted cost.

    Cost is sum_k (1-gamma h)^k h (-r_k); a state beyond the divergence
    limit truncates the trajectory and returns infinite cost.
    """
    n_steps = int(round(horizon / cfg.h))
    x = np.asarray(x0, dtype=float).copy()
    a = np.asarray(a0, dtype=float).copy()
    ts, xs, acts, rs = [], [], [], []
    cost = 0.0
    disc = 1.0
    for k in range(n_steps):
        if not np.isfinite(x).all() or np.abs(x).max() > DIVERGENCE_LIMIT:
            cost = math.inf
            break
        r = float(sys.reward(x, a))
        ts.append(k * cfg.h)
        xs.append(x.copy())
        acts.append(a.copy())
        rs.append(r)
        cost += disc * cfg.h * (-r)
        disc *= cfg.step_discount
        x_raw = step_exact(sys, x, a, cfg.h)
        x = clip_to_box(sys, x_raw) if clip_state else x_raw
        inc = greedy_increment(critic, xs[-1], a, cfg)
        a = _clip_actions(np.atleast_2d(a + inc), cfg.action_box)[0]
    traj = {
        "t": np.array(ts),
        "x": np.array(xs),
        "a": np.array(acts),
        "r": np.array(rs),
    }
    return traj, cost


def rollout_costs(sys, critic, x0s, a0s, cfg, horizon, clip_state=True):
    """Greedy rollout cost for a batch of start points, advanced in lockstep.

    Requires a critic with a batched action gradient and, for speed, a
    linear quadratic system (generic systems are stepped row by row).
    """
    xs = np.atleast_2d(np.asarray(x0s, dtype=float)).copy()
    acts = np.atleast_2d(np.asarray(a0s, dtype=float)).copy()
    n_pts = xs.shape[0]
    costs = np.zeros(n_pts)
    alive = np.ones(n_pts, dtype=bool)
    disc = 1.0
    lq = isinstance(sys, LinearQuadraticSystem)
    for _ in range(int(round(horizon / cfg.h))):
        blown = ~np.isfinite(xs).all(axis=1) | (np.abs(xs).max(axis=1) > DIVERGENCE_LIMIT)
        alive &= ~blown
        if not alive.any():
            break
        # park dead rows at the origin so they cannot overflow while the
        # rest of the batch keeps stepping
        xs[~alive] = 0.0
        acts[~alive] = 0.0
        if lq:
            rs = sys.reward_many(xs, acts)
            x_raw = sys.step_many(xs, acts, cfg.h)
        else:
            rs = np.array([sys.reward(x, a) for x, a in zip(xs, acts)])
            x_raw = np.stack([step_exact(sys, x, a, cfg.h) for x, a in zip(xs, acts)])
        costs[alive] += disc * cfg.h * (-rs[alive])
        disc *= cfg.step_discount
        incs = greedy_increment_many(critic, xs, acts, cfg)
        acts = _clip_actions(acts + incs, cfg.action_box)
        if clip_state:
            x_raw = np.clip(x_raw, sys.state_box[:, 0], sys.state_box[:, 1])
        xs = x_raw
    costs[~alive] = math.inf
    return costs


# ------------------------------------------------------------ diagnostics

def _ball_probe_points(m, radius, n_points):
    """Deterministic cover of the radius ball used as brute-force oracle.

    Points concentrate on the boundary sphere: with a nonvanishing
    gradient the small-ball maximum sits there, and the boundary is where
    angular resolution decides whether an O(h^2) gap is measurable at all.
    Interior rings remain as a safety net.
    """
    if m == 1:
        return np.linspace(-radius, radius, n_points)[:, None]
    if m == 2:
        n_bound = int(0.8 * n_points)
        bound = np.linspace(0.0, 2.0 * math.pi, n_bound, endpoint=False)
        pts = [radius * np.stack([np.cos(bound), np.sin(bound)], axis=1)]
        n_ang = (n_points - n_bound) // 4
        for rho in (0.25, 0.5, 0.75, 0.95):
            angles = np.linspace(0.0, 2.0 * math.pi, n_ang, endpoint=False)
            pts.append(rho * radius * np.stack([np.cos(angles), np.sin(angles)], axis=1))
        return np.concatenate(pts)
    rng = Rng(_BALL_SEED, (m,))
    dirs = rng.standard_normal((n_points, m))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    n_bound = int(0.8 * n_points)
    scales = np.concatenate(
        [np.ones(n_bound), np.linspace(0.0, 1.0, n_points - n_bound) ** (1.0 / m)]
    )
    return radius * scales[:, None] * dirs


def target_gap_slope(critic, x, a, h_list, lipschitz, x_next=None, n_points=10_000):
    """Gap between the ball maximum and the gradient-step value, per h.

    Fits log(gap) against log(h); the slope is NaN when every gap is below
    1e-12 (nothing to fit, e.g. a critic linear in the action).
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    x_next = x if x_next is None else np.asarray(x_next, dtype=float)
    g = critic.grad_action(x, a)
    norm = np.linalg.norm(g)
    if norm < _GRAD_FLOOR:
        raise ValueError("action gradient vanishes at the probe point")
    direction = g / norm
    gaps = []
    for h in h_list:
        radius = h * lipschitz
        offsets = np.vstack([_ball_probe_points(a.size, radius, n_points),
                             radius * direction[None, :]])
        cand = a[None, :] + offsets
        vals = critic.forward_many(np.tile(x_next, (cand.shape[0], 1)), cand)
        stepped = critic.forward(x_next, a + radius * direction)
        gaps.append(max(float(vals.max() - stepped), 0.0))
    gaps = np.array(gaps)
    hs = np.asarray(h_list, dtype=float)
    positive = gaps > 1e-300
    if np.all(gaps < 1e-12) or positive.sum() < 2:
        slope = math.nan
    else:
        slope = float(np.polyfit(np.log(hs[positive]), np.log(gaps[positive]), 1)[0])
    return {"h": hs, "gap": gaps, "slope": slope}

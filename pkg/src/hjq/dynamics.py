"""Control systems and their time discretizations.

A system couples a drift f(x, a), a running reward r(x, a), a discount rate
gamma, optional additive diffusion, and box domains for states and actions.
Actions are held constant over a sampling interval (zero-order hold);
:func:`step_exact` integrates the held system exactly for linear quadratic
systems and with dense RK4 substeps otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .numerics import Rng, expm, rk4_step

__all__ = [
    "ControlSystem",
    "LinearQuadraticSystem",
    "make_box",
    "step_exact",
    "step_sde",
    "clip_to_box",
    "clip_action",
    "make_random_lq",
    "lq_step_matrices",
]

# substep target for dense integration routes
_DT_DENSE = 0.01


def make_box(low: float, high: float, dim: int) -> np.ndarray:
    """Axis-aligned box [low, high]^dim as a (dim, 2) array."""
    if not low < high:
        raise ValueError("box needs low < high")
    return np.tile(np.array([low, high], dtype=np.float64), (dim, 1))


def _check_box(box: np.ndarray, dim: int, name: str) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64)
    if box.shape != (dim, 2) or not np.all(box[:, 0] < box[:, 1]):
        raise ValueError(f"{name} must be a ({dim}, 2) array of (low, high) with low < high")
    return box


@dataclass
class ControlSystem:
    """Generic continuous-time control system with callable drift and reward.

    ``drift`` and ``reward`` take (x, a) as 1-d arrays. ``diffusion``, if
    given, maps (x, a) to an (state_dim, noise_dim) matrix multiplying white
    noise in the state equation.
    """

    state_dim: int
    action_dim: int
    gamma: float
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    reward: Callable[[np.ndarray, np.ndarray], float]
    state_box: np.ndarray
    action_box: np.ndarray
    diffusion: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("dimensions must be positive")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError("gamma must be positive and finite")
        self.state_box = _check_box(self.state_box, self.state_dim, "state_box")
        self.action_box = _check_box(self.action_box, self.action_dim, "action_box")


@dataclass
class LinearQuadraticSystem:
    """dx/dt = A x + B a with reward r(x, a) = -(x'Q x + a'R a).

    Q must be symmetric positive semidefinite and R symmetric positive
    definite. ``noise`` > 0 adds isotropic diffusion noise * I to the state
    equation for the stochastic variant.
    """

    a_mat: np.ndarray
    b_mat: np.ndarray
    q_cost: np.ndarray
    r_cost: np.ndarray
    gamma: float
    state_box: np.ndarray
    action_box: np.ndarray
    noise: float = 0.0

    def __post_init__(self):
        self.a_mat = np.asarray(self.a_mat, dtype=np.float64)
        self.b_mat = np.asarray(self.b_mat, dtype=np.float64)
        self.q_cost = np.asarray(self.q_cost, dtype=np.float64)
        self.r_cost = np.asarray(self.r_cost, dtype=np.float64)
        n = self.a_mat.shape[0]
        if self.a_mat.shape != (n, n):
            raise ValueError("A must be square")
        if self.b_mat.ndim != 2 or self.b_mat.shape[0] != n:
            raise ValueError("B must have one row per state dimension")
        m = self.b_mat.shape[1]
        if self.q_cost.shape != (n, n) or self.r_cost.shape != (m, m):
            raise ValueError("Q and R must match the state and action dimensions")
        if np.abs(self.q_cost - self.q_cost.T).max() > 1e-12:
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(self.q_cost).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.abs(self.r_cost - self.r_cost.T).max() > 1e-12:
            raise ValueError("R must be symmetric")
        try:
            np.linalg.cholesky(self.r_cost)
        except np.linalg.LinAlgError:
            raise ValueError("R must be positive definite") from None
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError("gamma must be positive and finite")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        self.state_box = _check_box(self.state_box, n, "state_box")
        self.action_box = _check_box(self.action_box, m, "action_box")

    @property
    def state_dim(self) -> int:
        return self.a_mat.shape[0]

    @property
    def action_dim(self) -> int:
        return self.b_mat.shape[1]

    def drift(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        return self.a_mat @ x + self.b_mat @ a

    def reward(self, x: np.ndarray, a: np.ndarray) -> float:
        return -(float(x @ self.q_cost @ x) + float(a @ self.r_cost @ a))

    @property
    def diffusion(self):
        if self.noise == 0.0:
            return None
        eye = np.eye(self.state_dim) * self.noise
        return lambda x, a: eye

    # vectorized helpers used by grid solvers and batched evaluation

    def reward_many(self, xs: np.ndarray, acts: np.ndarray) -> np.ndarray:
        qx = np.einsum("ij,jk,ik->i", xs, self.q_cost, xs)
        ra = np.einsum("ij,jk,ik->i", acts, self.r_cost, acts)
        return -(qx + ra)

    def step_many(self, xs: np.ndarray, acts: np.ndarray, h: float) -> np.ndarray:
        e_mat, g_mat = lq_step_matrices(self, h)
        return xs @ e_mat.T + acts @ g_mat.T


@lru_cache(maxsize=64)
def _lq_step_matrices_cached(a_bytes: bytes, b_bytes: bytes, n: int, m: int, h: float):
    a_mat = np.frombuffer(a_bytes, dtype=np.float64).reshape(n, n)
    b_mat = np.frombuffer(b_bytes, dtype=np.float64).reshape(n, m)
    # exp of the block matrix [[A, B], [0, 0]] packs e^{Ah} and its integral
    # against B into one call
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a_mat
    aug[:n, n:] = b_mat
    big = expm(aug, h)
    return big[:n, :n].copy(), big[:n, n:].copy()


def lq_step_matrices(sys: LinearQuadraticSystem, h: float) -> tuple[np.ndarray, np.ndarray]:
    """(E, G) with x_next = E x + G a for one held interval of length h."""
    return _lq_step_matrices_cached(
        sys.a_mat.tobytes(), sys.b_mat.tobytes(), sys.state_dim, sys.action_dim, float(h)
    )


def _check_step_args(h: float):
    if not (math.isfinite(h) and h > 0):
        raise ValueError("h must be positive and finite")


def step_exact(sys, x: np.ndarray, a: np.ndarray, h: float) -> np.ndarray:
    """Advance the state by one interval of length h with the action held.

    Linear quadratic systems use the closed-form zero-order-hold solution;
    generic systems integrate the held drift with RK4 substeps no longer
    than 0.01.
    """
    _check_step_args(h)
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if isinstance(sys, LinearQuadraticSystem):
        e_mat, g_mat = lq_step_matrices(sys, h)
        return e_mat @ x + g_mat @ a
    substeps = max(1, math.ceil(h / _DT_DENSE))
    return rk4_step(lambda y: np.asarray(sys.drift(y, a), dtype=np.float64), x, h, substeps)


def step_sde(sys, x: np.ndarray, a: np.ndarray, h: float, rng: Rng) -> np.ndarray:
    """One noisy step: RK4 on the held drift plus Euler diffusion increments.

    With zero diffusion this reproduces the deterministic dense route of
    :func:`step_exact` bit for bit.
    """
    _check_step_args(h)
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    diffusion = sys.diffusion
    substeps = max(1, math.ceil(h / _DT_DENSE))
    dt = h / substeps
    def drift(y):
        return np.asarray(sys.drift(y, a), dtype=np.float64)

    for _ in range(substeps):
        if diffusion is not None:
            # Ito convention: coefficient frozen at the substep start
            sig = np.asarray(diffusion(x, a), dtype=np.float64)
            noise = math.sqrt(dt) * (sig @ rng.standard_normal(sig.shape[1]))
        else:
            noise = 0.0
        x = rk4_step(drift, x, dt, 1) + noise
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite state encountered during integration")
    return x


def clip_to_box(sys, x: np.ndarray) -> np.ndarray:
    """Project a state onto the system's state box, componentwise."""
    box = sys.state_box
    return np.clip(np.asarray(x, dtype=np.float64), box[:, 0], box[:, 1])


def clip_action(sys, a: np.ndarray) -> np.ndarray:
    """Project an action onto the system's action box, componentwise."""
    box = sys.action_box
    return np.clip(np.asarray(a, dtype=np.float64), box[:, 0], box[:, 1])


# instability screen for generated benchmarks: a system counts as unstable
# when some unit vector grows by more than this factor over the probe horizon
_GROWTH_HORIZON = 50.0
_GROWTH_FACTOR = 10.0
_N_PROBES = 20
_MAX_DRAWS = 1000


def make_random_lq(
    d: int,
    rng: Rng,
    gamma: float,
    state_bound: float = 10.0,
    action_bound: float = 10.0,
    noise: float = 0.0,
) -> LinearQuadraticSystem:
    """Draw a d-dimensional unstable linear quadratic benchmark system.

    Entries of A are uniform on [-0.1, 0.1] and entries of B uniform on
    [-0.5, 0.5]; Q and R are identities. Draws repeat until the uncontrolled
    flow map e^{A T} stretches one of 20 random unit probes by more than a
    factor of 10 over T = 50, so the do-nothing policy is not viable.

    Raises:
        RuntimeError: if no unstable draw is found within 1000 attempts.
    """
    for _ in range(_MAX_DRAWS):
        a_mat = rng.uniform(-0.1, 0.1, (d, d))
        b_mat = rng.uniform(-0.5, 0.5, (d, d))
        flow = expm(a_mat, _GROWTH_HORIZON)
        probes = rng.standard_normal((_N_PROBES, d))
        probes /= np.linalg.norm(probes, axis=1, keepdims=True)
        growth = np.linalg.norm(probes @ flow.T, axis=1).max()
        if growth > _GROWTH_FACTOR:
            return LinearQuadraticSystem(
                a_mat=a_mat,
                b_mat=b_mat,
                q_cost=np.eye(d),
                r_cost=np.eye(d),
                gamma=gamma,
                state_box=make_box(-state_bound, state_bound, d),
                action_box=make_box(-action_bound, action_bound, d),
                noise=noise,
            )
    raise RuntimeError(f"no unstable draw within {_MAX_DRAWS} attempts")

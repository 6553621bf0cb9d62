"""Grid-based solvers for the semi-discrete optimality equation.

The value table lives on a rectangular grid over state_box x action_box and
is read off-grid by multilinear interpolation. The one-step operator

    (T q)(x, a) = h r(x, a) + (1 - gamma h) sup_{|b| <= L} q(x', a + h b)

with x' the exact held-system step clipped into the state box, and the sup
taken over a finite candidate set of action increments, is a monotone
contraction with factor (1 - gamma h) whenever 0 < h < 1/gamma, for any
candidate set. Next states and candidate targets are clipped into the boxes,
which makes the clipped system on the compact domain the exact ground truth
that the contraction and convergence tests quantify against.

For one-dimensional action spaces the candidate set contains both ball
endpoints, zero, and every grid-node crossing inside the ball, so the sup of
the piecewise linear interpolant over the ball is computed exactly. Higher
action dimensions use a fixed fan of unit directions at four radii, which
samples the ball boundary densely enough for the benchmarks in scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .dynamics import LinearQuadraticSystem, step_exact
from .numerics import Rng

__all__ = [
    "GridQ",
    "QSyncSchedule",
    "GridCritic",
    "interp",
    "interp_gradient",
    "sup_over_ball",
    "bellman_apply",
    "value_iterate",
    "q_sync_update",
    "q_sync_run",
    "consistency_sweep",
    "action_spread",
    "fixed_point_error_bound",
]

# seed for the direction fan used by multi-dimensional action balls; fixed so
# every solver run sees the same deterministic candidate set
_DIRECTION_SEED = 271828

# radii fractions per direction, boundary-heavy since optima sit at the rim
_RADII = (0.25, 0.5, 0.75, 1.0)

_DEFAULT_N_DIRS = 16


@dataclass
class GridQ:
    """Value table on a rectangular state-action grid.

    ``resolution`` gives the node count per dimension (states first, then
    actions, each at least 2); ``values`` is flat in C order over the
    meshgrid of nodes.
    """

    state_box: np.ndarray
    action_box: np.ndarray
    resolution: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.state_box = np.asarray(self.state_box, dtype=np.float64)
        self.action_box = np.asarray(self.action_box, dtype=np.float64)
        self.resolution = tuple(int(r) for r in self.resolution)
        if any(r < 2 for r in self.resolution):
            raise ValueError("resolution must be at least 2 per dimension")
        if len(self.resolution) != self.dim:
            raise ValueError("resolution length must equal state_dim + action_dim")
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != int(np.prod(self.resolution)):
            raise ValueError("values length must be the product of the resolution")

    @property
    def state_dim(self) -> int:
        return self.state_box.shape[0]

    @property
    def action_dim(self) -> int:
        return self.action_box.shape[0]

    @property
    def dim(self) -> int:
        return self.state_dim + self.action_dim

    def axes(self) -> list[np.ndarray]:
        boxes = np.vstack([self.state_box, self.action_box])
        return [np.linspace(lo, hi, r) for (lo, hi), r in zip(boxes, self.resolution)]

    def nodes(self) -> np.ndarray:
        """All grid nodes as an (N, dim) array in C (row-major) order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def copy(self) -> "GridQ":
        return GridQ(self.state_box, self.action_box, self.resolution, self.values.copy())

    def with_values(self, values: np.ndarray) -> "GridQ":
        return GridQ(self.state_box, self.action_box, self.resolution, values)

    @classmethod
    def zeros(cls, state_box, action_box, resolution) -> "GridQ":
        n = int(np.prod(resolution))
        return cls(state_box, action_box, tuple(resolution), np.zeros(n))

    @classmethod
    def from_function(cls, state_box, action_box, resolution, fn) -> "GridQ":
        q = cls.zeros(state_box, action_box, resolution)
        pts = q.nodes()
        n = q.state_dim
        q.values = np.array([fn(p[:n], p[n:]) for p in pts], dtype=np.float64)
        return q


# ---------------------------------------------------------------- interpolation


def _grid_geometry(q: GridQ):
    boxes = np.vstack([q.state_box, q.action_box])
    lows = boxes[:, 0]
    highs = boxes[:, 1]
    res = np.array(q.resolution)
    steps = (highs - lows) / (res - 1)
    strides = np.ones(len(res), dtype=np.int64)
    for d in range(len(res) - 2, -1, -1):
        strides[d] = strides[d + 1] * res[d + 1]
    return lows, highs, res, steps, strides


def _footprint(q: GridQ, points: np.ndarray):
    """Enclosing-corner flat indices and weights for each query point.

    Points must already lie inside the boxes. Fractions within 1e-9 of a
    node are snapped onto it so node queries reproduce stored values
    exactly.
    """
    lows, highs, res, steps, strides = _grid_geometry(q)
    d = len(res)
    u = (points - lows) / steps
    base = np.clip(np.floor(u).astype(np.int64), 0, res - 2)
    frac = u - base
    frac[frac < 1e-9] = 0.0
    frac[frac > 1.0 - 1e-9] = 1.0
    n_corners = 1 << d
    idx = np.zeros((points.shape[0], n_corners), dtype=np.int64)
    w = np.ones((points.shape[0], n_corners))
    for corner in range(n_corners):
        flat = np.zeros(points.shape[0], dtype=np.int64)
        weight = np.ones(points.shape[0])
        for dim in range(d):
            hi_side = (corner >> dim) & 1
            flat += (base[:, dim] + hi_side) * strides[dim]
            weight = weight * (frac[:, dim] if hi_side else 1.0 - frac[:, dim])
        idx[:, corner] = flat
        w[:, corner] = weight
    return idx, w


def _interp_flat(q: GridQ, points: np.ndarray) -> np.ndarray:
    idx, w = _footprint(q, points)
    return (q.values[idx] * w).sum(axis=1)


def _check_in_box(q: GridQ, point: np.ndarray):
    boxes = np.vstack([q.state_box, q.action_box])
    if np.any(point < boxes[:, 0] - 1e-12) or np.any(point > boxes[:, 1] + 1e-12):
        raise ValueError(f"query point {point} lies outside the grid boxes")


def interp(q: GridQ, x: np.ndarray, a: np.ndarray) -> float:
    """Multilinear interpolation of the table at (x, a); exact at nodes and
    on affine functions, and errors out off the boxes."""
    point = np.concatenate([np.atleast_1d(x), np.atleast_1d(a)]).astype(np.float64)
    _check_in_box(q, point)
    return float(_interp_flat(q, point[None, :])[0])


def interp_gradient(q: GridQ, x: np.ndarray, a: np.ndarray) -> tuple[float, np.ndarray]:
    """Interpolated value and its gradient in all grid coordinates.

    The gradient is the cell-local slope of the multilinear interpolant
    (constant per cell in each coordinate's complementary weights).
    """
    point = np.concatenate([np.atleast_1d(x), np.atleast_1d(a)]).astype(np.float64)
    _check_in_box(q, point)
    lows, highs, res, steps, strides = _grid_geometry(q)
    idx, w = _footprint(q, point[None, :])
    value = float((q.values[idx] * w).sum())
    d = len(res)
    u = (point - lows) / steps
    base = np.clip(np.floor(u).astype(np.int64), 0, res - 2)
    frac = u - base
    frac = np.clip(frac, 0.0, 1.0)
    grad = np.zeros(d)
    n_corners = 1 << d
    for corner in range(n_corners):
        flat = 0
        for dim in range(d):
            flat += (base[dim] + ((corner >> dim) & 1)) * strides[dim]
        v = q.values[flat]
        for dim in range(d):
            dw = 1.0
            for other in range(d):
                side = (corner >> other) & 1
                if other == dim:
                    dw *= (1.0 if side else -1.0) / steps[other]
                else:
                    dw *= frac[other] if side else 1.0 - frac[other]
            grad[dim] += v * dw
    return value, grad


# ---------------------------------------------------------------- ball candidates


@lru_cache(maxsize=16)
def _sphere_directions(m: int, n_dirs: int) -> np.ndarray:
    rng = Rng(_DIRECTION_SEED, (m, n_dirs))
    dirs = rng.standard_normal((n_dirs, m))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    return dirs / norms


def _direction_fan_offsets(m: int, h: float, L: float, n_dirs: int) -> np.ndarray:
    dirs = _sphere_directions(m, n_dirs)
    offs = [np.zeros(m)]
    for u in dirs:
        for rho in _RADII:
            offs.append(rho * h * L * u)
    return np.array(offs)


def _ball_offsets(q: GridQ, a: np.ndarray, h: float, L: float, n_dirs: int) -> np.ndarray:
    """Candidate action offsets h*b with |b| <= L, as a (C, m) array.

    Order is fixed (zero first) so argmax tie-breaking is deterministic.
    For m = 1 the candidates include every node crossing strictly inside
    the ball around ``a``, making the piecewise-linear sup exact.
    """
    m = q.action_dim
    r = h * L
    if m == 1:
        axis = q.axes()[q.state_dim]
        inside = axis[(axis > a[0] - r * (1 - 1e-12)) & (axis < a[0] + r * (1 - 1e-12))]
        offs = [0.0, -r, r] + sorted(float(n) - float(a[0]) for n in inside)
        return np.array(offs)[:, None]
    return _direction_fan_offsets(m, h, L, n_dirs)


def _node_aligned_offsets(q: GridQ, h: float, L: float, n_dirs: int) -> np.ndarray:
    """Offset stencil shared by all grid nodes (queries start on nodes).

    For m = 1 the node crossings inside the ball sit at integer multiples
    of the action grid step, independent of which node is queried.
    """
    m = q.action_dim
    r = h * L
    if m == 1:
        step = float(q.axes()[q.state_dim][1] - q.axes()[q.state_dim][0])
        k_max = int(math.floor(r * (1 - 1e-12) / step))
        offs = [0.0, -r, r]
        for k in range(1, k_max + 1):
            offs.extend([-k * step, k * step])
        return np.array(offs)[:, None]
    return _direction_fan_offsets(m, h, L, n_dirs)


def sup_over_ball(
    q: GridQ, x_next: np.ndarray, a: np.ndarray, h: float, L: float, n_dirs: int = _DEFAULT_N_DIRS
) -> tuple[float, np.ndarray]:
    """Maximize q(x_next, clip(a + h b)) over candidate rates |b| <= L.

    Returns the maximal interpolated value and the first maximizing b in the
    fixed candidate order. Candidate targets are clipped into the action
    box, so a ball poking out of the box never raises.
    """
    x_next = np.atleast_1d(np.asarray(x_next, dtype=np.float64))
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    offs = _ball_offsets(q, a, h, L, n_dirs)
    targets = np.clip(a[None, :] + offs, q.action_box[:, 0], q.action_box[:, 1])
    pts = np.hstack([np.tile(x_next, (len(offs), 1)), targets])
    vals = _interp_flat(q, pts)
    best = int(np.argmax(vals))
    return float(vals[best]), offs[best] / h


# ---------------------------------------------------------------- Bellman operator


class _BellmanOp:
    """Precomputed one-step operator for a fixed grid, system, h and L.

    Building the interpolation footprint of every (node, candidate) pair
    once turns each application into a gather, a product and a max.
    """

    def __init__(self, q: GridQ, sys, h: float, L: float, n_dirs: int):
        gamma = sys.gamma
        if not (0.0 < h < 1.0 / gamma):
            raise ValueError("need 0 < h < 1/gamma for a positive contraction factor")
        if L <= 0:
            raise ValueError("L must be positive")
        self.h = h
        self.factor = 1.0 - gamma * h
        n = q.state_dim
        pts = q.nodes()
        xs, acts = pts[:, :n], pts[:, n:]
        if isinstance(sys, LinearQuadraticSystem):
            rewards = sys.reward_many(xs, acts)
            x_next = sys.step_many(xs, acts, h)
        else:
            rewards = np.array([sys.reward(x, a) for x, a in zip(xs, acts)])
            x_next = np.array([step_exact(sys, x, a, h) for x, a in zip(xs, acts)])
        x_next = np.clip(x_next, sys.state_box[:, 0], sys.state_box[:, 1])
        offs = _node_aligned_offsets(q, h, L, n_dirs)
        self.n_nodes, self.n_cands = len(pts), len(offs)
        targets = np.clip(
            acts[:, None, :] + offs[None, :, :], q.action_box[:, 0], q.action_box[:, 1]
        )
        query = np.concatenate(
            [np.repeat(x_next[:, None, :], self.n_cands, axis=1), targets], axis=2
        )
        self.idx, self.w = _footprint(q, query.reshape(-1, q.dim))
        self.rewards = rewards

    def apply(self, values: np.ndarray) -> np.ndarray:
        best = (values[self.idx] * self.w).sum(axis=1).reshape(self.n_nodes, self.n_cands).max(axis=1)
        return self.h * self.rewards + self.factor * best


def bellman_apply(q: GridQ, sys, h: float, L: float, n_dirs: int = _DEFAULT_N_DIRS) -> GridQ:
    """One application of the semi-discrete optimality operator to the table."""
    op = _BellmanOp(q, sys, h, L, n_dirs)
    return q.with_values(op.apply(q.values))


def fixed_point_error_bound(residual: float, gamma: float, h: float) -> float:
    """Sup-norm distance to the fixed point implied by a one-step residual."""
    factor = 1.0 - gamma * h
    return residual * factor / (1.0 - factor)


def value_iterate(
    q0: GridQ,
    sys,
    h: float,
    L: float,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    n_dirs: int = _DEFAULT_N_DIRS,
    history: Optional[list] = None,
) -> GridQ:
    """Iterate the operator to its fixed point.

    Stops when the sup-norm update residual drops below ``tol``; the
    returned table is then within tol * (1 - gamma h) / (gamma h) of the
    true fixed point in sup norm. ``history`` collects per-iteration
    residuals when a list is passed.

    Raises:
        RuntimeError: if the residual fails to reach ``tol`` in ``max_iter``
            sweeps.
    """
    op = _BellmanOp(q0, sys, h, L, n_dirs)
    v = q0.values.copy()
    for _ in range(max_iter):
        new = op.apply(v)
        resid = float(np.abs(new - v).max())
        if history is not None:
            history.append(resid)
        v = new
        if resid < tol:
            return q0.with_values(v)
    raise RuntimeError(f"no fixed point within {max_iter} sweeps, last residual {resid:.3e}")


# ---------------------------------------------------------------- synchronous learning


@dataclass
class QSyncSchedule:
    """Step-size schedule alpha_k for synchronous updates.

    ``kind`` is "constant" (alpha_k = value), "harmonic" (alpha_k = 1/(k+1)),
    or "sequence" (explicit list). ``sum_diverges`` records whether the
    schedule's sum is infinite, the condition separating convergent from
    stalling runs; for explicit sequences it is False since any finite list
    has a finite sum.
    """

    kind: str = "constant"
    value: float = 1.0
    sequence: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic", "sequence"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and not 0.0 <= self.value <= 1.0:
            raise ValueError("constant step size must lie in [0, 1]")
        if self.kind == "sequence":
            self.sequence = np.asarray(self.sequence, dtype=np.float64)
            if np.any(self.sequence < 0.0) or np.any(self.sequence > 1.0):
                raise ValueError("sequence entries must lie in [0, 1]")

    def alpha(self, k: int) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "harmonic":
            return 1.0 / (k + 1)
        return float(self.sequence[k])

    @property
    def sum_diverges(self) -> bool:
        if self.kind == "constant":
            return self.value > 0.0
        if self.kind == "harmonic":
            return True
        return False


def q_sync_update(
    q: GridQ, sys, h: float, L: float, alpha: float, n_dirs: int = _DEFAULT_N_DIRS
) -> GridQ:
    """One damped synchronous update (1 - alpha) q + alpha T q."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    op = _BellmanOp(q, sys, h, L, n_dirs)
    return q.with_values((1.0 - alpha) * q.values + alpha * op.apply(q.values))


def q_sync_run(
    q0: GridQ,
    sys,
    h: float,
    L: float,
    schedule: QSyncSchedule,
    n_iters: int,
    q_ref: Optional[GridQ] = None,
    n_dirs: int = _DEFAULT_N_DIRS,
) -> dict:
    """Run damped synchronous updates, tracking residuals and errors.

    Returns a dict with the final table ("q"), per-iteration update
    residuals ("residuals", length n_iters), and, when ``q_ref`` is given,
    sup-norm errors to the reference after 0..n_iters updates ("errors")
    next to the geometric bound prod_{t<k} (1 - alpha_t gamma h) * errors[0]
    ("bounds").
    """
    op = _BellmanOp(q0, sys, h, L, n_dirs)
    gamma_h = sys.gamma * h
    v = q0.values.copy()
    residuals = np.empty(n_iters)
    errors = np.empty(n_iters + 1) if q_ref is not None else None
    bounds = np.empty(n_iters + 1) if q_ref is not None else None
    if q_ref is not None:
        errors[0] = float(np.abs(v - q_ref.values).max())
        bounds[0] = errors[0]
    shrink = 1.0
    for k in range(n_iters):
        alpha = schedule.alpha(k)
        tv = op.apply(v)
        residuals[k] = float(np.abs(tv - v).max())
        v = (1.0 - alpha) * v + alpha * tv
        if q_ref is not None:
            shrink *= 1.0 - alpha * gamma_h
            errors[k + 1] = float(np.abs(v - q_ref.values).max())
            bounds[k + 1] = shrink * errors[0]
    out = {"q": q0.with_values(v), "residuals": residuals}
    if q_ref is not None:
        out["errors"] = errors
        out["bounds"] = bounds
    return out


# ---------------------------------------------------------------- diagnostics


def consistency_sweep(
    sys,
    L: float,
    h_list: Sequence[float],
    resolution: tuple[int, ...],
    tol: float = 1e-10,
    n_dirs: int = _DEFAULT_N_DIRS,
) -> dict:
    """Fixed points for several h on one common grid, compared to the finest.

    Returns a dict with "h" (descending, excluding the reference), "sup_diff"
    (sup over grid nodes of |Q^h - Q^{h_min}|), and "reference_h".
    """
    hs = sorted(set(float(h) for h in h_list), reverse=True)
    if len(hs) < 2:
        raise ValueError("need at least two distinct h values")
    zeros = GridQ.zeros(sys.state_box, sys.action_box, resolution)
    tables = {h: value_iterate(zeros, sys, h, L, tol=tol, n_dirs=n_dirs) for h in hs}
    h_ref = hs[-1]
    ref = tables[h_ref].values
    out_h = hs[:-1]
    diffs = [float(np.abs(tables[h].values - ref).max()) for h in out_h]
    return {"h": out_h, "sup_diff": np.array(diffs), "reference_h": h_ref}


def action_spread(q: GridQ) -> float:
    """Largest over states of the value range across that state's actions."""
    grid = q.values.reshape(q.resolution)
    action_axes = tuple(range(q.state_dim, q.dim))
    spread = grid.max(axis=action_axes) - grid.min(axis=action_axes)
    return float(np.max(spread))


class GridCritic:
    """Adapter exposing a value table through the critic call surface.

    forward/grad_action mirror the neural critic so greedy rollouts can run
    straight off a solved table (states are clipped into the grid's state
    box before lookup).
    """

    def __init__(self, q: GridQ):
        self.q = q

    def _clip_state(self, x):
        box = self.q.state_box
        return np.clip(np.atleast_1d(np.asarray(x, dtype=np.float64)), box[:, 0], box[:, 1])

    def forward(self, x, a) -> float:
        return interp(self.q, self._clip_state(x), a)

    def grad_action(self, x, a) -> np.ndarray:
        _, grad = interp_gradient(self.q, self._clip_state(x), a)
        return grad[self.q.state_dim :]

"""Discounted linear quadratic ground truth via Riccati integration.

For dx/dt = A x + B a with running cost x'Q x + a'R a discounted at rate
gamma, substituting the damped variables e^{-gamma t/2} x turns the problem
into an undiscounted one with drift matrix A_gamma = A - (gamma/2) I. The
stationary point of the matrix Riccati flow

    dP/dt = A_gamma' P + P A_gamma + Q - P B R^{-1} B' P,   P(0) = 0,

is the stabilizing solution of the algebraic Riccati equation; the optimal
discounted cost from x0 is x0' P x0 and the optimal feedback is
a = -R^{-1} B' P x. Integrating the flow to stationarity is self-certifying:
the norm of dP/dt at the returned matrix is the equation residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import LinearQuadraticSystem, step_exact

__all__ = [
    "RiccatiSolution",
    "solve_care",
    "care_residual",
    "optimal_cost",
    "riccati_feedback",
    "evaluate_policy_cost",
]

# state magnitude past which a rollout counts as diverged
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class RiccatiSolution:
    """Stationary Riccati matrix with its equation residual (max abs entry)."""

    p_mat: np.ndarray
    residual: float


def _care_rhs(sys: LinearQuadraticSystem) -> Callable[[np.ndarray], np.ndarray]:
    a_shift = sys.a_mat - 0.5 * sys.gamma * np.eye(sys.state_dim)
    gain = sys.b_mat @ np.linalg.solve(sys.r_cost, sys.b_mat.T)

    def rhs(p):
        return a_shift.T @ p + p @ a_shift + sys.q_cost - p @ gain @ p

    return rhs


def care_residual(sys: LinearQuadraticSystem, p_mat: np.ndarray) -> float:
    """Max absolute entry of the algebraic Riccati residual at ``p_mat``."""
    return float(np.abs(_care_rhs(sys)(p_mat)).max())


def solve_care(
    sys: LinearQuadraticSystem,
    dt: float = 0.01,
    tol: float = 1e-10,
    max_steps: int = 10**6,
) -> RiccatiSolution:
    """Integrate the Riccati flow from zero until dP/dt is below ``tol``.

    Uses fixed-step RK4 on the matrix ODE, re-symmetrizing after every step
    to keep roundoff from breaking symmetry.

    Raises:
        RuntimeError: if stationarity is not reached within ``max_steps``.
    """
    rhs = _care_rhs(sys)
    p = np.zeros((sys.state_dim, sys.state_dim))
    for _ in range(max_steps):
        k1 = rhs(p)
        resid = float(np.abs(k1).max())
        if resid < tol:
            return RiccatiSolution(p_mat=p, residual=resid)
        k2 = rhs(p + 0.5 * dt * k1)
        k3 = rhs(p + 0.5 * dt * k2)
        k4 = rhs(p + dt * k3)
        p = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        p = 0.5 * (p + p.T)
        if not np.all(np.isfinite(p)):
            raise RuntimeError("Riccati flow diverged")
    raise RuntimeError(f"Riccati flow not stationary within {max_steps} steps")


def optimal_cost(sol: RiccatiSolution, x0: np.ndarray) -> float:
    """Optimal discounted cost x0' P x0 from state x0 (any initial action)."""
    x0 = np.asarray(x0, dtype=np.float64)
    return float(x0 @ sol.p_mat @ x0)


def riccati_feedback(sys: LinearQuadraticSystem, sol: RiccatiSolution):
    """Optimal unconstrained feedback a = -R^{-1} B' P x as a policy map.

    The returned callable has the policy signature (x, a_prev) -> a and
    ignores a_prev: the unconstrained optimum may move the action freely.
    """
    k_gain = np.linalg.solve(sys.r_cost, sys.b_mat.T @ sol.p_mat)

    def policy(x, a_prev):
        return -k_gain @ x

    return policy


def evaluate_policy_cost(
    sys,
    policy: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x0: np.ndarray,
    a0: np.ndarray,
    h: float,
    horizon: Optional[float] = None,
) -> float:
    """Discounted cost of a policy rollout with sampling interval h.

    The policy sees the current state and the previous action. Cost is
    accumulated as sum_k e^{-gamma k h} h (-r(x_k, a_k)) over
    k = 0 .. ceil(horizon/h) - 1, the left-endpoint rule on the held
    trajectory. The default horizon 10/gamma leaves a discount tail below
    5e-5. Returns math.inf once the state max-norm exceeds 1e6.
    """
    if horizon is None:
        horizon = 10.0 / sys.gamma
    if not (math.isfinite(h) and h > 0 and horizon > 0):
        raise ValueError("need h > 0 and horizon > 0")
    n_steps = int(math.ceil(horizon / h - 1e-12))
    x = np.asarray(x0, dtype=np.float64)
    a = np.asarray(a0, dtype=np.float64)
    decay = math.exp(-sys.gamma * h)
    disc = 1.0
    cost = 0.0
    for k in range(n_steps):
        if np.abs(x).max() > DIVERGENCE_LIMIT:
            return math.inf
        if k > 0:
            a = np.asarray(policy(x, a), dtype=np.float64)
        cost += disc * h * (-sys.reward(x, a))
        x = step_exact(sys, x, a, h)
        disc *= decay
    return cost

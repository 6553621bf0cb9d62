"""Shared test helpers: closed-form critics and the 1-D benchmark system."""

import numpy as np

from hjq.dynamics import LinearQuadraticSystem, make_box


def lq_benchmark_1d():
    """Scalar unstable LQ problem on the clipped unit boxes."""
    return LinearQuadraticSystem(
        a_mat=[[0.5]],
        b_mat=[[1.0]],
        q_cost=np.eye(1),
        r_cost=np.eye(1),
        gamma=1.0,
        state_box=make_box(-1, 1, 1),
        action_box=make_box(-1, 1, 1),
    )


class QuadraticCritic:
    """Q(x, a) = -(a - center)' M (a - center); ignores the state."""

    def __init__(self, m_mat, center):
        self.m_mat = np.asarray(m_mat, dtype=float)
        self.center = np.asarray(center, dtype=float)

    def forward(self, x, a):
        d = np.asarray(a, dtype=float) - self.center
        return float(-(d @ self.m_mat @ d))

    def forward_many(self, xs, acts):
        d = np.atleast_2d(np.asarray(acts, dtype=float)) - self.center
        return -np.einsum("ni,ij,nj->n", d, self.m_mat, d)

    def grad_action(self, x, a):
        return -2.0 * self.m_mat @ (np.asarray(a, dtype=float) - self.center)

    def grad_action_many(self, xs, acts):
        d = np.atleast_2d(np.asarray(acts, dtype=float)) - self.center
        return -2.0 * d @ self.m_mat.T


class LinearCritic:
    """Q(x, a) = c . a; constant action gradient, zero state dependence."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    def forward(self, x, a):
        return float(self.c @ np.asarray(a, dtype=float))

    def forward_many(self, xs, acts):
        return np.atleast_2d(np.asarray(acts, dtype=float)) @ self.c

    def grad_action(self, x, a):
        return self.c.copy()

    def grad_action_many(self, xs, acts):
        return np.tile(self.c, (np.atleast_2d(acts).shape[0], 1))

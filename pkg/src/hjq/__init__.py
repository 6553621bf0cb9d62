"""Continuous-time Q-learning with Lipschitz-bounded action rates.

Subpackages cover the numerical substrate (`numerics`), control systems and
their exact discretizations (`dynamics`), a Riccati oracle for linear
quadratic benchmarks (`lq_oracle`), grid-based semi-discrete solvers
(`grid_q`), a hand-rolled MLP critic (`critic`), the deep learning loop
(`hjdqn`), and the experiment driver with its CLI (`expcli`).
"""

__version__ = "0.1.0"

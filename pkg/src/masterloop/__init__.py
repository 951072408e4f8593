"""Wilson loops on lattice gauge theories: loop surgeries, Lie group calculus,
Monte Carlo sampling and numerical checks of the master loop equations."""

__version__ = "0.1.0"

"""Nonlinear solution engines for reduced and full-order models."""
from .continuation import backbone, continue_frf
from .hb import HBSolution, HarmonicBalance, hb_residual, solve_hb
from .shooting import PeriodicOrbit, shooting_oracle
from .static import newton_static
from .transient import TimeSeries, newmark_transient

__all__ = [
    "HBSolution",
    "HarmonicBalance",
    "PeriodicOrbit",
    "TimeSeries",
    "backbone",
    "continue_frf",
    "hb_residual",
    "newmark_transient",
    "newton_static",
    "shooting_oracle",
    "solve_hb",
]

"""Numerical laboratory for the spatially inhomogeneous Boltzmann equation with soft potentials."""

__version__ = "0.1.0"

from .collision import (  # noqa: E402
    BobylevConfig,
    CollisionKernel,
    SphereRule,
    collision_full,
    gain_bobylev,
    gain_direct,
    loss_rate,
    loss_term,
    post_collision,
)
from .grid import DistributionField, PhaseGrid, ScalingParams, SpectralField, apply_scaling, fourier_v, inverse_fourier_v, weighted_norm  # noqa: E402
from .solvers import SolverConfig, Trajectory, kaniel_shinbrot, picard_gain_only  # noqa: E402
from .transport import TimeGrid, free_stream, xi_propagate  # noqa: E402

__all__ = [
    "BobylevConfig",
    "CollisionKernel",
    "DistributionField",
    "PhaseGrid",
    "ScalingParams",
    "SolverConfig",
    "SpectralField",
    "SphereRule",
    "TimeGrid",
    "Trajectory",
    "apply_scaling",
    "collision_full",
    "fourier_v",
    "free_stream",
    "gain_bobylev",
    "gain_direct",
    "inverse_fourier_v",
    "kaniel_shinbrot",
    "loss_rate",
    "loss_term",
    "picard_gain_only",
    "post_collision",
    "weighted_norm",
    "xi_propagate",
]

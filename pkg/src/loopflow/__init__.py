"""Heat-flow Morse complex on loop spaces of catalogue manifolds.

The pipeline: find perturbed closed geodesics below an action level,
grade them by Morse index, count sign-weighted heat-flow connecting
orbits of index difference one, verify that the boundary operator
squares to zero, and compute integer homology.
"""

from .manifold import Circle, FlatTorus, ManifoldSpec, RoundSphere, \
    make_manifold
from .loopspace import DiscreteLoop, LoopField, action, constant_loop, \
    heat_residual, loop_distance, random_smooth_loop
from .perturbation import (
    AmbientLinear,
    AngleCosine,
    BumpPerturbation,
    ComboPerturbation,
    GeometricPerturbation,
    SumPerturbation,
    ZERO,
    admissible_radius,
    check_sublevel_inclusions,
    critical_gap,
)
from .critical import CriticalPoint, assemble_hessian, enumerate_below, \
    newton_solve
from .heatflow import CylinderTrajectory, decay_fit, detect_limit, energy, \
    integrate, step
from .linearized import OperatorFamily, apply_Du, apply_Du_star, \
    cylinder_inner, spectral_flow, stationary_kernel_basis, \
    stationary_trajectory
from .moduli import (
    ConnectingOrbit,
    FlowControls,
    UnstableChart,
    build_chart,
    compute_sign,
    enumerate_connecting,
    ev0_injectivity,
    refine_trajectory,
    unstable_rank,
)
from .complex import MorseComplex, assemble, check_d_squared, \
    compare_reference, homology, smith_normal_form
from .config import RunConfig, load_config
from . import errors

__version__ = "0.1.0"

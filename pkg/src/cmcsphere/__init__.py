"""Discrete perturbed-energy solver for constant mean curvature 2-spheres in the 3-sphere."""

from .diagnostics import (
    concentration_scan,
    blowup_rescale,
    energy_bound_check,
    index_comparison_check,
    morse_index,
)
from .energy import (
    EnergyBreakdown,
    MapField,
    TangentField,
    cmc_residual,
    dirichlet,
    gradient,
    hessian_apply,
    hopf_residual,
    perturbed_energy,
    tracked_energy,
    volume_increment,
)
from .flow import CriticalPointRecord, FlowConfig, descend, energy_trace
from .mesh import SphereMesh, assemble_operators, build_icosphere, local_ball_indices
from .metric import conformal_round, round_s3
from .minmax import (
    MinMaxConfig,
    MinMaxRecord,
    Sweepout,
    good_slice_extract,
    latitude_sweepout,
    mountain_pass,
    omega_over_h_scan,
    sweepout_max,
)

__version__ = "0.1.0"

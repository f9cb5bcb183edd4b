"""Neural surrogate workbench for a drug-parameterized cardiac action
potential model: reference ODE solver, physics-informed training of a
hypernetwork-conditioned surrogate, and biomarker-level evaluation."""

__version__ = "0.1.0"

from .capmodel import (  # noqa: F401
    DrugConfig,
    ModelConstants,
    StimulusSpec,
    STATE_NAMES,
    inhibition_factor,
    gate_steady_states,
    ionic_currents,
    rhs,
)
from .solver import SolveConfig, Trajectory, resting_state, solve, solve_batch  # noqa: F401

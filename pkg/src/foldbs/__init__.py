"""Folding backstepping for a reaction-diffusion equation with interior actuation."""
from .core import (
    FoldContinuityError,
    FoldedParams,
    Grid1D,
    GridMismatchError,
    PlantSpec,
    TriGrid,
    fold,
    folded_params,
    gauge_transform,
    table1_spec,
    unfold,
)
from .gains import GainTable, assemble_feedback, assemble_h, output_feedback, state_feedback
from .kernel_aux import QRKernels, apply_second_transform, invert_second_transform, solve_qr
from .kernel_ctrl import ConvergenceError, Row1Kernels, Row2Kernels, solve_row1, solve_row2
from .kernel_obs import ObserverKernel, bessel_phi_closed_form, solve_observer_kernel
from .sim import SimConfig, Trajectory, run

__version__ = "0.1.0"

"""Multi-view landmark fitting."""

from .energy import FitProblem, e_gaussian, e_gmm, e_l2, e_landmarks, e_temporal, total_energy
from .params import EnergyWeights, FitConfig, FitParams, Layout, PosePriorSet, perturb_init
from .solver import FitResult, fit, vertex_rms

__all__ = [
    "FitProblem", "e_gaussian", "e_gmm", "e_l2", "e_landmarks", "e_temporal", "total_energy",
    "EnergyWeights", "FitConfig", "FitParams", "Layout", "PosePriorSet", "perturb_init",
    "FitResult", "fit", "vertex_rms",
]

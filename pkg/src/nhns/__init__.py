"""Newton-based implicit midpoint stepping for the Allen-Cahn equation with
learned initial guesses."""

from nhns.grid import GridSpec, LaplacianOp, l2_norm, linf_norm, hs_norm
from nhns.schemes import SchemeParams, EtdParams, midpoint_map, residual, energy, etd_step
from nhns.newton import NewtonConfig, NewtonReport, newton_solve
from nhns.net import ConvSpec, ConvNet, FULL_1D, FULL_2D
from nhns.training import DatasetSpec, TrainConfig, train
from nhns.hybrid import Direct, Neural, EtdPredictor, RunConfig, run

__all__ = [
    "GridSpec", "LaplacianOp", "l2_norm", "linf_norm", "hs_norm",
    "SchemeParams", "EtdParams", "midpoint_map", "residual", "energy", "etd_step",
    "NewtonConfig", "NewtonReport", "newton_solve",
    "ConvSpec", "ConvNet", "FULL_1D", "FULL_2D",
    "DatasetSpec", "TrainConfig", "train",
    "Direct", "Neural", "EtdPredictor", "RunConfig", "run",
]

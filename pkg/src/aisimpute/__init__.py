"""Accelerated inexact Soft-Impute for low-rank matrix and tensor completion."""

__version__ = "0.1.0"

from .linalg import (LowRankFactors, approx_svt, power_method, qr_orthonormalize,
                     svt_dense, svt_dual_certificate, weighted_svt_dense)
from .losses import LossKind, loss_value, objective, sparse_gradient
from .solver import SolverConfig, SolverTrace, ais_impute, apg_exact, soft_impute
from .splr import LowRankTerm, SparseCoo, SplrOperator, build_accel_iterate
from .tensor import LatentDecomposition, SparseTensorCoo, tensor_ais_impute
from .postprocess import SpectrumFit, refit_matrix, refit_tensor
from .nonconvex import RegularizerKind, dc_tnn, dc_weighted, supergradient_weights
from .data import Dataset, load_coo, save_coo, synth_matrix, synth_tensor
from .metrics import Metrics, evaluate
from .tuning import select_matrix, select_tensor

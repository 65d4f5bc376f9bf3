"""Supervised convolutional kernel networks in numpy.

Layers encode image patches with a Nystrom-style projection onto a Gaussian
kernel subspace spanned by unit-norm filters; filters are learned either by
spherical K-means or end to end by backpropagation on the sphere.
"""

from .core_maps import PoolSpec, combine_patches, extract_patches, pool_adjoint, pool_forward
from .errors import (ConvergenceError, DataError, FormatError, InvalidArgumentError, SCKNError,
                     SingularMatrixError, StepDegenerateError, UnsupportedFormatError, VersionMismatchError)
from .grad import Loss, backprop, layer_backward, loss_value_grad, network_backward
from .kernel_ops import KernelSpec, inv_sqrt_psd, kappa, kappa_prime
from .layer import (LayerConfig, LayerParams, NetworkParams, encode_patch, layer_forward, network_forward,
                    spherical_kmeans, unsupervised_init)
from .optim import FitSchedule, LinearModel, compute_preconditioner, fit, solve_W_convex, sphere_step

__version__ = "0.1.0"

__all__ = [
    "PoolSpec",
    "combine_patches",
    "extract_patches",
    "pool_adjoint",
    "pool_forward",
    "ConvergenceError",
    "DataError",
    "FormatError",
    "InvalidArgumentError",
    "SCKNError",
    "SingularMatrixError",
    "StepDegenerateError",
    "UnsupportedFormatError",
    "VersionMismatchError",
    "Loss",
    "backprop",
    "layer_backward",
    "loss_value_grad",
    "network_backward",
    "KernelSpec",
    "inv_sqrt_psd",
    "kappa",
    "kappa_prime",
    "LayerConfig",
    "LayerParams",
    "NetworkParams",
    "encode_patch",
    "layer_forward",
    "network_forward",
    "spherical_kmeans",
    "unsupervised_init",
    "FitSchedule",
    "LinearModel",
    "compute_preconditioner",
    "fit",
    "solve_W_convex",
    "sphere_step",
]

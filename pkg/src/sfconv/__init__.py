"""Factorized convolutions with a singular-value equalization regularizer."""

from .factorized import (
    DEFAULT_RANK,
    FactorizedFilter,
    SpectrumView,
    emulated_weight,
    init_factorized,
    sfconv_backward,
    sfconv_forward,
    spectrum_view,
)
from .linalg import SvdResult, singular_value_gradient, svd
from .regularizer import (
    LossReport,
    RegularizerConfig,
    Spectrum,
    combine_loss,
    kl_gradient,
    kl_to_uniform,
    layer_kl,
    network_kl,
    normalize_spectrum,
)
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_RANK",
    "FactorizedFilter",
    "LossReport",
    "RegularizerConfig",
    "Spectrum",
    "SpectrumView",
    "SvdResult",
    "Tensor",
    "combine_loss",
    "emulated_weight",
    "init_factorized",
    "kl_gradient",
    "kl_to_uniform",
    "layer_kl",
    "network_kl",
    "normalize_spectrum",
    "sfconv_backward",
    "sfconv_forward",
    "singular_value_gradient",
    "spectrum_view",
    "svd",
]

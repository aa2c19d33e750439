"""Bottom-up scattering information perception for SAR target recognition.

Learnable Morlet scattering front-end, unsupervised part discovery, part
aggregation, the part-learning losses, and a training/evaluation harness.
"""
from .config import RunConfig
from .errors import (
    BusipError,
    ConfigurationError,
    DatasetError,
    NonFiniteLossError,
    ParameterDomainError,
)
from .losses import LossWeights
from .model import BUSIPNet
from .morlet import MorletFilterBank, MorletParams, make_filterbank, make_morlet
from .scattering import LocalScatteringPerceptron, scatter

__version__ = "0.1.0"

__all__ = [
    "BUSIPNet",
    "BusipError",
    "ConfigurationError",
    "DatasetError",
    "LocalScatteringPerceptron",
    "LossWeights",
    "MorletFilterBank",
    "MorletParams",
    "NonFiniteLossError",
    "ParameterDomainError",
    "RunConfig",
    "make_filterbank",
    "make_morlet",
    "scatter",
]

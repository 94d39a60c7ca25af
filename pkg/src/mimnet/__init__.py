"""Mixed residual networks for high-order elliptic problems on the unit cube."""

__version__ = "0.1.0"

from .fields import BoundaryKind, FirstOrderBundle, SecondOrderBundle, network_bundle
from .loss import empirical_loss, expected_loss, loss_and_gradient
from .network import ShallowNetwork, project_to_class
from .problem import ProblemSpec, SpectralFunction, barron_norm, single_mode_spec
from .train import OptimizerConfig, train

__all__ = [
    "BoundaryKind",
    "FirstOrderBundle",
    "SecondOrderBundle",
    "network_bundle",
    "empirical_loss",
    "expected_loss",
    "loss_and_gradient",
    "ShallowNetwork",
    "project_to_class",
    "ProblemSpec",
    "SpectralFunction",
    "barron_norm",
    "single_mode_spec",
    "OptimizerConfig",
    "train",
]

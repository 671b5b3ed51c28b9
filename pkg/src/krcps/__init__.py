"""Conformal risk control for high-dimensional interval predictors."""

from .bounds import UcbKind, bentkus_ucb, hoeffding_ucb, hybrid_ucb, ucb
from .core import (
    CalibrationSet,
    IntervalBundle,
    Membership,
    RiskSpec,
    nested_intervals,
    split_calibration,
)
from .exceptions import (
    DimensionError,
    InfeasibleError,
    InsufficientSamplesError,
    KrcpsError,
    NumericalError,
    RiskControlError,
)
from .losses import GammaParams, loss01, loss_gamma, pinball_loss
from .procedure import ConformalMap, KrcpsResult, build_membership, conformalize, krcps, rcps
from .quantiles import calibrated_quantiles, naive_quantiles
from .rcps import SweepResult, rcps_scalar
from .solver import PkInstance, build_pk_instance, gamma_search, solve_pk

__version__ = "0.1.0"

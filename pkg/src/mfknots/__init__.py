"""Mean-field two-layer ReLU networks: noisy-SGD particles, the Gibbs
minimizer of the free energy, cluster sets and knot extraction."""

from .activation import ActivationSpec, Mode
from .clusterset import ClusterReport, cluster_report
from .data import Dataset, PredictionIntervals, load_dataset, make_intervals, save_dataset
from .errors import MFKnotsError, NumericalError, ValidationError
from .gibbs import GibbsState, MalaConfig, solve_fixed_point
from .particle import ParticleEnsemble, TrainConfig, predict, predict_derivatives, train
from .pwl import PiecewiseLinear, check_admissible, extract_pwl

__version__ = "0.1.0"

__all__ = [
    "ActivationSpec", "Mode", "ClusterReport", "cluster_report", "Dataset", "PredictionIntervals",
    "load_dataset", "make_intervals", "save_dataset", "MFKnotsError", "NumericalError", "ValidationError",
    "GibbsState", "MalaConfig", "solve_fixed_point", "ParticleEnsemble", "TrainConfig", "predict",
    "predict_derivatives", "train", "PiecewiseLinear", "check_admissible", "extract_pwl",
]

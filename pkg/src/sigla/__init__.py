"""Clustered layer-wise federated learning simulator for mmWave
beam-sector selection.

Vehicles train local dense sector classifiers on synthetic non-IID
multi-modal data; an edge server scores layer importance, selects the
layers worth transmitting, clusters vehicles by CKA model similarity, and
aggregates within and across clusters. Baseline strategies (FedAvg,
magnitude pruning, fixed-period layer-wise aggregation) and a stochastic
contact-time channel allow accuracy/communication comparisons.
"""

from ._backend import BACKEND
from .aggregation import AggregationStrategy
from .comms import ChannelConfig
from .data import GenConfig
from .nn import Architecture, Model, TrainConfig
from .orchestrator import RunConfig, compare_strategies, predict_sector, run
from .sensitivity import ThresholdPolicy
from .similarity import KernelConfig

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AggregationStrategy",
    "Architecture",
    "ChannelConfig",
    "GenConfig",
    "KernelConfig",
    "Model",
    "RunConfig",
    "ThresholdPolicy",
    "TrainConfig",
    "compare_strategies",
    "predict_sector",
    "run",
    "__version__",
]

"""Patch-based sLSTM forecaster for multivariate time series.

A small numpy library implementing the sLSTM recurrent cell (exponential
gating, normalizer state, block-diagonal memory mixing) with hand-written
backpropagation through time, a patching + channel-independence forecasting
model, a training/evaluation stack, and a Markov-chain probe that measures
the cell's memory behaviour empirically.
"""

__version__ = "0.1.0"

from .tensorops import Rng, ShapeError
from .cells import GateMode, SLSTMParams, SLSTMState, LSTM_MODE
from .model import ModelConfig, Forecaster
from .training import TrainConfig, Metrics

__all__ = [
    "Rng",
    "ShapeError",
    "GateMode",
    "SLSTMParams",
    "SLSTMState",
    "LSTM_MODE",
    "ModelConfig",
    "Forecaster",
    "TrainConfig",
    "Metrics",
    "__version__",
]

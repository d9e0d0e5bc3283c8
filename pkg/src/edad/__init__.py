"""Encode-then-decompose anomaly detection for (possibly contaminated) time series."""

from .data import TimeSeries, InjectionSpec, inject_anomalies, contaminate, load_csv, preprocess
from .encoder import EncoderConfig, encode
from .metrics import evaluate
from .scoring import detect, threshold
from .trainer import EDADModel, TrainConfig, train

__version__ = "0.1.0"

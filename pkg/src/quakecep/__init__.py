"""Mel filter-bank and cepstral features from bridge accelerations, with a GRU drift regressor."""

from .cepstral import build_filterbank, dct_mfcc, hz_to_mel, mel_to_hz, mfb
from .errors import ConfigError, ConvergenceError, DataError, QuakeCepError, TrainingDivergence
from .features import FeatureConfig, event_features, fuse, intensity, intensity_vector
from .neural import Architecture, forward, init_params, predict
from .signal_model import AccelRecord, FrameSet, frame_signal
from .spectral import fft, periodogram

__version__ = "0.1.0"

__all__ = [
    "AccelRecord", "Architecture", "ConfigError", "ConvergenceError", "DataError", "FeatureConfig",
    "FrameSet", "QuakeCepError", "TrainingDivergence", "build_filterbank", "dct_mfcc",
    "event_features", "fft", "forward", "frame_signal", "fuse", "hz_to_mel", "init_params",
    "intensity", "intensity_vector", "mel_to_hz", "mfb", "periodogram", "predict",
]

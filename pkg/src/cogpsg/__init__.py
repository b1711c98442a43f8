"""Sleep-to-cognition toolkit: PSG ingestion, preprocessing, EEG/HRV features,
multi-scale convolutional Transformer models and subject-wise cross-validation."""

__version__ = "0.1.0"

EEG_CHANNEL = "C3"
REF_CHANNEL = "M2"
ECG_CHANNEL = "ECG-I"
REQUIRED_CHANNELS = (EEG_CHANNEL, REF_CHANNEL, ECG_CHANNEL)
TARGET_RATE_HZ = 70.0

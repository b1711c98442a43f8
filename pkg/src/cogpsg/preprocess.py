"""Raw-signal preprocessing: re-reference, band-pass, artifact mask, crop,
segmentation and z-scoring."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from cogpsg import kernels
from cogpsg.errors import SignalError

ARTIFACT_EPOCH_S = 5.0
ARTIFACT_PTP_UV = 300.0
ARTIFACT_STD_FACTOR = 5.0
FILTER_ORDER = 4


class ZeroVarianceWarning(RuntimeWarning):
    pass


@dataclass
class ArtifactMask:
    flags: np.ndarray
    epoch_len_s: float = ARTIFACT_EPOCH_S

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)

    def __len__(self):
        return len(self.flags)

    def expand(self, n_samples, rate_hz):
        """Per-sample boolean mask; samples past the last whole epoch are unflagged."""
        per = int(round(self.epoch_len_s * rate_hz))
        out = np.zeros(n_samples, dtype=bool)
        full = np.repeat(self.flags, per)[:n_samples]
        out[: len(full)] = full
        return out


@dataclass
class SegmentTensor:
    data: np.ndarray
    window_s: float
    step_s: float
    rate_hz: float

    @property
    def shape(self):
        return self.data.shape

    def start_sample(self, i):
        return int(round(i * self.step_s * self.rate_hz))


def rereference(primary, reference):
    primary = np.asarray(primary, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if primary.shape != reference.shape:
        raise SignalError(f"{primary.shape} vs {reference.shape}", code="LENGTH_MISMATCH")
    return primary - reference


def nyquist_safe_band(low_hz, high_hz, rate_hz, margin_hz=0.5):
    """Pull an upper cutoff that sits on or above Nyquist just below it."""
    nyq = rate_hz / 2.0
    if high_hz >= nyq:
        high_hz = nyq - margin_hz
    return low_hz, high_hz


def butter_bandpass_sos(low_hz, high_hz, rate_hz, order=FILTER_ORDER):
    if not 0 < low_hz < high_hz < rate_hz / 2.0:
        raise SignalError(f"band {low_hz}-{high_hz} Hz invalid at {rate_hz} Hz", code="INVALID_BAND")
    return sps.butter(order, [low_hz, high_hz], btype="bandpass", fs=rate_hz, output="sos")


def bandpass(x, low_hz, high_hz, rate_hz, order=FILTER_ORDER):
    """Zero-phase (forward-backward) Butterworth band-pass; same length as input."""
    sos = butter_bandpass_sos(low_hz, high_hz, rate_hz, order)
    x = np.asarray(x, dtype=np.float64)
    return sps.sosfiltfilt(sos, x)


def detect_artifacts(eeg, rate_hz, ptp_uv=ARTIFACT_PTP_UV, std_factor=ARTIFACT_STD_FACTOR,
                     epoch_len_s=ARTIFACT_EPOCH_S) -> ArtifactMask:
    """Flag 5-s epochs whose peak-to-peak exceeds ``ptp_uv`` or whose std exceeds
    ``std_factor`` times the median epoch std."""
    per = int(round(epoch_len_s * rate_hz))
    if len(eeg) < per:
        raise SignalError("signal shorter than one artifact epoch", code="TOO_SHORT")
    ptp, sd = kernels.epoch_stats(eeg, per)
    flags = (ptp > ptp_uv) | (sd > std_factor * np.median(sd))
    return ArtifactMask(flags, epoch_len_s)


def crop(x, rate_hz, target_s=18000.0):
    """Keep the first ``target_s`` seconds."""
    n = int(round(target_s * rate_hz))
    if len(x) < n:
        raise SignalError(f"{len(x) / rate_hz:.1f} s < {target_s} s", code="TOO_SHORT")
    return np.asarray(x)[:n]


def n_windows(duration_s, window_s, step_s):
    if window_s > duration_s + 1e-9:
        return 0
    return int(np.floor((duration_s - window_s) / step_s + 1e-9)) + 1


def segment(x, rate_hz, window_s, step_s=None) -> SegmentTensor:
    step_s = window_s if step_s is None else step_s
    x = np.asarray(x)
    duration = len(x) / rate_hz
    if window_s > duration + 1e-9:
        raise SignalError(f"window {window_s} s > {duration} s", code="WINDOW_TOO_LARGE")
    t = int(round(window_s * rate_hz))
    s = n_windows(duration, window_s, step_s)
    starts = np.round(np.arange(s) * step_s * rate_hz).astype(int)
    data = np.stack([x[a:a + t] for a in starts]) if s else np.zeros((0, t), x.dtype)
    return SegmentTensor(data, window_s, step_s, rate_hz)


def apply_mask(segments: SegmentTensor, mask: ArtifactMask) -> SegmentTensor:
    """Zero every sample that falls in a flagged epoch; segment count is kept."""
    data = segments.data.copy()
    s, t = data.shape
    if s == 0:
        return SegmentTensor(data, segments.window_s, segments.step_s, segments.rate_hz)
    span = segments.start_sample(s - 1) + t
    per_sample = mask.expand(span, segments.rate_hz)
    for i in range(s):
        a = segments.start_sample(i)
        data[i, per_sample[a:a + t]] = 0
    return SegmentTensor(data, segments.window_s, segments.step_s, segments.rate_hz)


def zscore(x, axis=None, valid=None):
    """Standardize over ``axis`` (None = whole array).

    ``valid`` optionally restricts the statistics (and the output) to rows
    along axis 0; other rows are returned as zeros. A zero-variance scope
    yields zeros and a ``ZeroVarianceWarning``.
    """
    x = np.asarray(x, dtype=np.float64)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        out = np.zeros_like(x)
        if valid.any():
            out[valid] = zscore(x[valid], axis=axis)
        else:
            warnings.warn("no valid rows to standardize", ZeroVarianceWarning, stacklevel=2)
        return out
    mean = x.mean(axis=axis, keepdims=True)
    centered = x - mean
    std = np.sqrt((centered ** 2).mean(axis=axis, keepdims=True))
    degenerate = ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    if np.any(degenerate):
        warnings.warn("zero variance scope; output set to zero", ZeroVarianceWarning, stacklevel=2)
    safe = np.where(degenerate, 1.0, std)
    return np.where(degenerate, 0.0, centered / safe)

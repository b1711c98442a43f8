"""EEG band powers and HRV feature series."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate
from scipy import signal as sps

from cogpsg import kernels
from cogpsg.errors import FeatureError
from cogpsg.preprocess import butter_bandpass_sos, n_windows


@dataclass(frozen=True)
class BandDefinition:
    name: str
    low_hz: float
    high_hz: float

    def __post_init__(self):
        if not 0 <= self.low_hz < self.high_hz:
            raise ValueError(f"bad band {self}")


EEG_BANDS = (
    BandDefinition("delta", 0.5, 4.0),
    BandDefinition("theta", 4.0, 8.0),
    BandDefinition("alpha", 8.0, 12.0),
    BandDefinition("sigma", 12.0, 16.0),
    BandDefinition("beta", 16.0, 30.0),
    BandDefinition("gamma", 30.0, 35.0),
)
HRV_BANDS = (
    BandDefinition("vlf", 0.0033, 0.04),
    BandDefinition("lf", 0.04, 0.15),
    BandDefinition("hf", 0.15, 0.40),
)
TIME_HRV_NAMES = ("MeanNN", "SDNN", "RMSSD", "CVNN", "SDRMSSD", "pNN20")
FREQ_HRV_NAMES = ("VLF", "LF", "HF", "LFHF", "TP")

MT_TIME_HALF_BANDWIDTH = 4.0
MT_N_TAPERS = 7
TACHOGRAM_HZ = 4.0
REFRACTORY_S = 0.25
HR_RANGE_BPM = (40.0, 100.0)


@dataclass
class RRSeries:
    intervals_ms: np.ndarray
    t_start_s: float = 0.0

    def __post_init__(self):
        self.intervals_ms = np.asarray(self.intervals_ms, dtype=np.float64)
        if np.any(self.intervals_ms <= 0):
            raise ValueError("RR intervals must be positive")

    @classmethod
    def from_peaks(cls, peaks, rate_hz):
        peaks = np.asarray(peaks)
        t0 = peaks[0] / rate_hz if len(peaks) else 0.0
        return cls(np.diff(peaks) / rate_hz * 1000.0, float(t0))


@dataclass
class FeatureSet:
    eeg_power: np.ndarray
    hrv_time: np.ndarray
    hrv_freq: np.ndarray
    valid: dict[str, np.ndarray] = field(default_factory=dict)

    def arrays(self):
        return {"eeg_power": self.eeg_power, "hrv_time": self.hrv_time, "hrv_freq": self.hrv_freq}


# ---------------------------------------------------------------- EEG power

_dpss_cache: dict[tuple[int, float, int], np.ndarray] = {}


def _tapers(n, nw, k):
    key = (n, nw, k)
    if key not in _dpss_cache:
        _dpss_cache[key] = sps.windows.dpss(n, nw, Kmax=k)
    return _dpss_cache[key]


def multitaper_psd(x, rate_hz, nw=MT_TIME_HALF_BANDWIDTH, n_tapers=MT_N_TAPERS):
    """One-sided multitaper PSD (equal taper weights), last axis is time.

    Returns ``(freqs, psd)`` with psd in units^2/Hz.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    tapers = _tapers(n, nw, n_tapers)
    spec = np.fft.rfft(x[..., None, :] * tapers, axis=-1)
    psd = (np.abs(spec) ** 2).mean(axis=-2) / rate_hz
    psd[..., 1:] *= 2.0
    if n % 2 == 0:
        psd[..., -1] /= 2.0
    return np.fft.rfftfreq(n, 1.0 / rate_hz), psd


def band_integral(freqs, psd, low, high):
    sel = (freqs >= low) & (freqs < high)
    if sel.sum() < 2:
        return np.zeros(psd.shape[:-1])
    return integrate.trapezoid(psd[..., sel], freqs[sel], axis=-1)


def multitaper_bandpower(segment, rate_hz, bands=EEG_BANDS, nw=MT_TIME_HALF_BANDWIDTH,
                         n_tapers=MT_N_TAPERS):
    """Absolute power per band for one segment (or a stack of segments).

    Returns ``(powers, valid)``; an all-zero segment yields zeros and
    ``valid`` False.
    """
    seg = np.asarray(segment, dtype=np.float64)
    if seg.shape[-1] < 2 * rate_hz:
        raise FeatureError("segment shorter than 2 s", code="SEGMENT_TOO_SHORT")
    freqs, psd = multitaper_psd(seg, rate_hz, nw, n_tapers)
    powers = np.stack([band_integral(freqs, psd, b.low_hz, b.high_hz) for b in bands], axis=-1)
    valid = np.any(seg != 0, axis=-1)
    powers = np.where(np.asarray(valid)[..., None], powers, 0.0)
    return powers, valid


# ---------------------------------------------------------------- R peaks

def qrs_energy(ecg, rate_hz):
    """Band-pass, differentiate, square and integrate over 150 ms (centered)."""
    high = min(15.0, rate_hz / 2.0 - 1.0)
    filt = sps.sosfiltfilt(butter_bandpass_sos(5.0, high, rate_hz, order=2), ecg)
    deriv = np.gradient(filt)
    win = max(1, int(round(0.15 * rate_hz)))
    return np.convolve(deriv ** 2, np.ones(win) / win, mode="same")


def detect_rpeaks(ecg, rate_hz, refractory_s=REFRACTORY_S):
    """R-peak sample indices via a Pan-Tompkins style detector.

    Candidates are local maxima of the integrated QRS energy at least one
    refractory period apart; the adaptive dual-threshold decision with
    search-back runs in :func:`cogpsg.kernels.threshold_peaks`. Each accepted
    candidate is refined to the maximum of the raw ECG within 100 ms.
    """
    ecg = np.asarray(ecg, dtype=np.float64)
    if len(ecg) < 10 * rate_hz:
        raise FeatureError("need at least 10 s of ECG", code="TOO_SHORT")
    if not np.any(ecg != ecg[0]):
        raise FeatureError("flat ECG", code="NO_PEAKS")
    energy = qrs_energy(ecg, rate_hz)
    refractory = int(round(refractory_s * rate_hz))
    cand, _ = sps.find_peaks(energy, distance=max(1, refractory))
    if len(cand) == 0:
        raise FeatureError("no QRS candidates", code="NO_PEAKS")
    learn = energy[: int(2 * rate_hz)]
    spki = 0.25 * learn.max()
    npki = 0.5 * learn.mean()
    accepted = kernels.threshold_peaks(cand, energy[cand], refractory, spki, npki)
    qrs = cand[accepted.astype(bool)]
    if len(qrs) == 0:
        raise FeatureError("no QRS detected", code="NO_PEAKS")
    half = max(1, int(round(0.1 * rate_hz)))
    peaks = np.empty(len(qrs), dtype=np.int64)
    for i, c in enumerate(qrs):
        lo, hi = max(0, c - half), min(len(ecg), c + half + 1)
        peaks[i] = lo + int(np.argmax(ecg[lo:hi]))
    peaks = np.unique(peaks)
    # refinement can pull two candidates onto one beat or inside the refractory gap
    keep = [0]
    for i in range(1, len(peaks)):
        if peaks[i] - peaks[keep[-1]] >= refractory:
            keep.append(i)
        elif ecg[peaks[i]] > ecg[peaks[keep[-1]]]:
            keep[-1] = i
    return peaks[keep]


def hr_sanity(peaks, window_s, rate_hz=None, hr_range=HR_RANGE_BPM):
    """True iff ``60 * (n_peaks - 1) / window_s`` lies in the accepted HR range."""
    n = len(peaks)
    if n < 2 or window_s <= 0:
        return False
    hr = 60.0 * (n - 1) / window_s
    return bool(hr_range[0] <= hr <= hr_range[1])


# ---------------------------------------------------------------- HRV

def time_hrv(rr: RRSeries, pnn_threshold_ms=20.0):
    """Returns ``(values, valid)`` in :data:`TIME_HRV_NAMES` order."""
    x = rr.intervals_ms
    if len(x) < 3:
        raise FeatureError(f"{len(x)} intervals", code="TOO_FEW_BEATS")
    mean_nn = x.mean()
    sdnn = x.std()
    d = np.diff(x)
    rmssd = np.sqrt(np.mean(d ** 2))
    cvnn = sdnn / mean_nn
    valid = True
    if rmssd > 0:
        sdrmssd = sdnn / rmssd
    else:
        sdrmssd, valid = 0.0, False
    pnn20 = 100.0 * np.mean(np.abs(d) > pnn_threshold_ms)
    return np.array([mean_nn, sdnn, rmssd, cvnn, sdrmssd, pnn20]), valid


def tachogram(rr: RRSeries, fs=TACHOGRAM_HZ):
    """Evenly resampled RR series (cubic interpolation), values in ms."""
    x = rr.intervals_ms
    t = rr.t_start_s + np.cumsum(x) / 1000.0
    grid = np.arange(t[0], t[-1], 1.0 / fs)
    f = interpolate.interp1d(t, x, kind="cubic")
    return grid, f(grid)


def freq_hrv(rr: RRSeries, window_s=None, fs=TACHOGRAM_HZ):
    """Returns ``(values, valid)`` in :data:`FREQ_HRV_NAMES` order (ms^2)."""
    x = rr.intervals_ms
    span = x.sum() / 1000.0
    if len(x) < 10 or span < 120.0:
        raise FeatureError(f"{len(x)} intervals over {span:.0f} s", code="TOO_FEW_BEATS")
    _, tach = tachogram(rr, fs)
    tach = sps.detrend(tach, type="linear")
    nperseg = min(len(tach), int(2.0 / HRV_BANDS[0].low_hz * fs))
    freqs, psd = sps.welch(tach, fs=fs, window="hann", nperseg=nperseg, detrend=False)
    vlf, lf, hf = (band_integral(freqs, psd, b.low_hz, b.high_hz) for b in HRV_BANDS)
    tp = band_integral(freqs, psd, HRV_BANDS[0].low_hz, HRV_BANDS[-1].high_hz)
    valid = bool(hf > 0)
    lfhf = lf / hf if valid else 0.0
    return np.array([vlf, lf, hf, lfhf, tp], dtype=np.float64), valid


# ---------------------------------------------------------------- sequences

def _hrv_windows(peaks, rate_hz, duration_s, window_s, step_s, fn, width, hr_range):
    s = n_windows(duration_s, window_s, step_s)
    out = np.zeros((s, width))
    valid = np.zeros(s, dtype=bool)
    for i in range(s):
        a = i * step_s * rate_hz
        b = a + window_s * rate_hz
        p = peaks[(peaks >= a) & (peaks < b)]
        if not hr_sanity(p, window_s, rate_hz, hr_range):
            continue
        try:
            vals, ok = fn(RRSeries.from_peaks(p, rate_hz))
        except (FeatureError, ValueError):
            continue
        if ok and np.all(np.isfinite(vals)):
            out[i], valid[i] = vals, True
    return out, valid


def build_feature_sequences(eeg_segments, ecg_signal, rate_hz,
                            time_window=(120.0, 60.0), freq_window=(300.0, 150.0),
                            nw=MT_TIME_HALF_BANDWIDTH, n_tapers=MT_N_TAPERS, hr_range=HR_RANGE_BPM,
                            pnn_threshold_ms=20.0, tachogram_hz=TACHOGRAM_HZ) -> FeatureSet:
    """All three feature streams for one subject.

    ``eeg_segments`` is the masked ``[S, T]`` EEG array (or SegmentTensor).
    Failing windows are zero rows with ``valid`` False; the subject is never aborted.
    """
    eeg = getattr(eeg_segments, "data", eeg_segments)
    power, pvalid = multitaper_bandpower(eeg, rate_hz, EEG_BANDS, nw, n_tapers)
    duration = len(ecg_signal) / rate_hz
    try:
        peaks = detect_rpeaks(ecg_signal, rate_hz)
    except FeatureError:
        peaks = np.zeros(0, dtype=np.int64)
    t_fn = lambda rr: time_hrv(rr, pnn_threshold_ms)  # noqa: E731
    f_fn = lambda rr: freq_hrv(rr, freq_window[0], tachogram_hz)  # noqa: E731
    t_arr, t_valid = _hrv_windows(peaks, rate_hz, duration, *time_window, t_fn, len(TIME_HRV_NAMES), hr_range)
    f_arr, f_valid = _hrv_windows(peaks, rate_hz, duration, *freq_window, f_fn, len(FREQ_HRV_NAMES), hr_range)
    return FeatureSet(
        eeg_power=power,
        hrv_time=t_arr,
        hrv_freq=f_arr,
        valid={"eeg_power": np.asarray(pvalid), "hrv_time": t_valid, "hrv_freq": f_valid},
    )

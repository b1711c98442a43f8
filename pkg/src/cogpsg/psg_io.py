"""Recording container I/O, cohort filtering and synthetic PSG cohorts.

Container layout (little endian)::

    uint32 id_len, utf-8 subject_id
    float64 rate_hz
    uint32 n_channels
    n_channels x (uint32 name_len, utf-8 name, uint64 n_samples)
    float32 samples, channel after channel in header order

Every container ``<id>.psg`` has a JSON sidecar ``<id>.json`` holding the
subject id, rate and channel names.
"""
from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import signal as sps

from cogpsg import ECG_CHANNEL, EEG_CHANNEL, REF_CHANNEL, REQUIRED_CHANNELS
from cogpsg.errors import ContainerError, SignalError

log = logging.getLogger(__name__)

CONTAINER_SUFFIX = ".psg"
SCORES_FILE = "scores.csv"
EXCLUSION_REASONS = ("MISSING_CHANNEL", "CORRUPT_SIGNAL", "NO_SCORE", "TOO_SHORT")
ZERO_FRACTION_LIMIT = 0.9

# flat-spectrum band RMS targets for the synthetic EEG, in uV
SYNTH_BANDS = (
    ("delta", 0.5, 4.0, 20.0),
    ("theta", 4.0, 8.0, 10.0),
    ("alpha", 8.0, 12.0, 15.0),
    ("sigma", 12.0, 16.0, 6.0),
    ("beta", 16.0, 30.0, 5.0),
    ("gamma", 30.0, 35.0, 2.0),
)
# per-subject lognormal spread of each band RMS
SUBJECT_BAND_SPREAD = 0.03


@dataclass
class Recording:
    subject_id: str
    channels: dict[str, np.ndarray]
    rate_hz: float
    duration_s: float

    def __post_init__(self):
        if self.rate_hz <= 0 or self.duration_s <= 0:
            raise ValueError("rate_hz and duration_s must be positive")

    @classmethod
    def from_channels(cls, subject_id, channels, rate_hz):
        lengths = {len(v) for v in channels.values()}
        n = max(lengths) if lengths else 0
        return cls(subject_id, dict(channels), float(rate_hz), n / float(rate_hz))

    @property
    def n_samples(self):
        return round(self.rate_hz * self.duration_s)


@dataclass
class CohortManifest:
    included: list[str] = field(default_factory=list)
    excluded: list[tuple[str, str]] = field(default_factory=list)
    score_table: dict[str, float] = field(default_factory=dict)

    def to_dict(self):
        return {
            "included": list(self.included),
            "excluded": [list(e) for e in self.excluded],
            "score_table": dict(self.score_table),
        }


@dataclass(frozen=True)
class SynthCohortSpec:
    n_subjects: int = 16
    duration_s: float = 18000.0
    rate_hz: float = 70.0
    effect_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ValueError("n_subjects must be >= 2")
        if not 0.0 <= self.effect_strength <= 1.0:
            raise ValueError("effect_strength must lie in [0, 1]")
        if self.duration_s <= 0 or self.rate_hz <= 0:
            raise ValueError("duration_s and rate_hz must be positive")


# ---------------------------------------------------------------- container

def write_recording(path, rec: Recording):
    path = Path(path)
    if not rec.channels:
        raise ContainerError("recording has no channels", code="EMPTY")
    header = bytearray()
    sid = rec.subject_id.encode("utf-8")
    header += struct.pack("<I", len(sid)) + sid
    header += struct.pack("<dI", float(rec.rate_hz), len(rec.channels))
    for name, data in rec.channels.items():
        raw = name.encode("utf-8")
        header += struct.pack("<I", len(raw)) + raw + struct.pack("<Q", len(data))
    with open(path, "wb") as fh:
        fh.write(header)
        for data in rec.channels.values():
            fh.write(np.asarray(data, dtype="<f4").tobytes())
    sidecar = {
        "subject_id": rec.subject_id,
        "rate_hz": float(rec.rate_hz),
        "channels": list(rec.channels),
        "duration_s": float(rec.duration_s),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path


def read_recording(path) -> Recording:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ContainerError(f"{path}: {exc}") from exc
    try:
        off = 0

        def take(fmt):
            nonlocal off
            vals = struct.unpack_from(fmt, buf, off)
            off += struct.calcsize(fmt)
            return vals

        (id_len,) = take("<I")
        subject_id = buf[off:off + id_len].decode("utf-8")
        if len(subject_id.encode()) != id_len:
            raise ValueError("truncated subject id")
        off += id_len
        rate_hz, n_channels = take("<dI")
        names, counts = [], []
        for _ in range(n_channels):
            (name_len,) = take("<I")
            raw = buf[off:off + name_len]
            if len(raw) != name_len:
                raise ValueError("truncated channel name")
            names.append(raw.decode("utf-8"))
            off += name_len
            counts.append(take("<Q")[0])
        if off + 4 * sum(counts) != len(buf):
            raise ValueError(f"sample block size mismatch ({len(buf) - off} bytes for {sum(counts)} samples)")
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise ContainerError(f"{path}: malformed container ({exc})") from exc
    if n_channels == 0:
        raise ContainerError(f"{path}: zero channels", code="EMPTY")
    if not rate_hz > 0:
        raise ContainerError(f"{path}: invalid rate {rate_hz}")
    channels = {}
    for name, count in zip(names, counts):
        channels[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=off).astype(np.float32)
        off += 4 * count
    return Recording.from_channels(subject_id, channels, rate_hz)


def read_scores(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["subject_id", "score"]:
            raise ContainerError(f"{path}: score table needs a 'subject_id,score' header")
        return {row[0].strip(): float(row[1]) for row in reader if row}


def write_scores(path, scores):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "score"])
        for sid in sorted(scores):
            w.writerow([sid, repr(float(scores[sid]))])


def write_cohort(directory, recordings, scores):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for rec in recordings:
        write_recording(directory / f"{rec.subject_id}{CONTAINER_SUFFIX}", rec)
    write_scores(directory / SCORES_FILE, scores)
    return directory


def list_recordings(directory):
    return sorted(Path(directory).glob(f"*{CONTAINER_SUFFIX}"))


# ---------------------------------------------------------------- signals

def resample(x, from_hz, to_hz):
    """Band-limited polyphase resampling to ``round(len * to_hz / from_hz)`` samples."""
    if from_hz <= 0 or to_hz <= 0:
        raise SignalError("sampling rates must be positive", code="INVALID_RATE")
    x = np.asarray(x, dtype=np.float64)
    if from_hz == to_hz:
        return x.copy()
    n_out = round(len(x) * to_hz / from_hz)
    ratio = Fraction(to_hz / from_hz).limit_denominator(1000)
    y = sps.resample_poly(x, ratio.numerator, ratio.denominator)
    if len(y) >= n_out:
        return y[:n_out]
    return np.pad(y, (0, n_out - len(y)), mode="edge")


def filter_cohort(recordings, scores, required_channels=REQUIRED_CHANNELS,
                  min_duration_s=18000.0, zero_fraction_limit=ZERO_FRACTION_LIMIT) -> CohortManifest:
    """Apply the exclusion rules; output is sorted by subject id."""
    included, excluded = [], []
    for rec in sorted(recordings, key=lambda r: r.subject_id):
        reason = None
        if any(ch not in rec.channels for ch in required_channels):
            reason = "MISSING_CHANNEL"
        elif any(_zero_fraction(rec.channels[ch]) > zero_fraction_limit for ch in required_channels):
            reason = "CORRUPT_SIGNAL"
        elif rec.subject_id not in scores:
            reason = "NO_SCORE"
        elif rec.duration_s < min_duration_s:
            reason = "TOO_SHORT"
        if reason is None:
            included.append(rec.subject_id)
        else:
            excluded.append((rec.subject_id, reason))
    table = {sid: float(scores[sid]) for sid in included}
    return CohortManifest(included, excluded, table)


def _zero_fraction(x):
    x = np.asarray(x)
    return 1.0 if x.size == 0 else float(np.count_nonzero(x == 0)) / x.size


# ---------------------------------------------------------------- synthesis

def _band_noise(rng, n, rate_hz, band_rms):
    """Gaussian noise whose spectrum is flat inside each band with the given RMS."""
    freqs = np.fft.rfftfreq(n, 1.0 / rate_hz)
    amp = np.zeros_like(freqs)
    for (lo, hi), rms in band_rms:
        sel = (freqs >= lo) & (freqs < hi)
        k = int(sel.sum())
        if k:
            # irfft of unit complex gaussians over k bins has variance ~ 2k/n^2
            amp[sel] = rms * n / np.sqrt(2.0 * k)
    spec = amp * (rng.standard_normal(len(freqs)) + 1j * rng.standard_normal(len(freqs))) / np.sqrt(2.0)
    spec[0] = 0.0
    return np.fft.irfft(spec, n)


def _spindles(rng, n, rate_hz, amp_uv=15.0, mean_gap_s=20.0):
    out = np.zeros(n)
    t_total = n / rate_hz
    t = rng.exponential(mean_gap_s)
    half = int(round(1.0 * rate_hz))
    tt = np.arange(-half, half + 1) / rate_hz
    while t < t_total - 1.0:
        f = rng.uniform(12.0, 15.0)
        burst = amp_uv * np.exp(-0.5 * (tt / 0.25) ** 2) * np.sin(2 * np.pi * f * tt + rng.uniform(0, 2 * np.pi))
        c = int(t * rate_hz)
        lo, hi = max(0, c - half), min(n, c + half + 1)
        out[lo:hi] += burst[lo - (c - half):hi - (c - half)]
        t += rng.exponential(mean_gap_s)
    return out


def synthetic_rr_ms(rng, duration_s, mean_hr_bpm, jitter_ms):
    """RR series covering ``duration_s`` with LF/HF modulation plus white jitter."""
    mean_rr = 60000.0 / mean_hr_bpm
    lf_phase, hf_phase = rng.uniform(0, 2 * np.pi, size=2)
    rr, t = [], 0.0
    while t < duration_s * 1000.0 + 2 * mean_rr:
        ts = t / 1000.0
        val = (mean_rr + 25.0 * np.sin(2 * np.pi * 0.1 * ts + lf_phase)
               + 20.0 * np.sin(2 * np.pi * 0.25 * ts + hf_phase)
               + jitter_ms * rng.standard_normal())
        val = float(np.clip(val, 620.0, 1450.0))
        rr.append(val)
        t += val
    return np.asarray(rr)


def impulse_ecg(beat_times_s, n, rate_hz, amplitude_mv=1.0, width_s=0.01):
    """Impulse train smoothed by a narrow Gaussian; the R peak sits on the beat sample."""
    x = np.zeros(n)
    idx = np.round(np.asarray(beat_times_s) * rate_hz).astype(int)
    idx = idx[(idx >= 0) & (idx < n)]
    x[idx] = amplitude_mv
    sigma = width_s * rate_hz
    half = max(1, int(np.ceil(4 * sigma)))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    return np.convolve(x, k, mode="same")


def iter_synthetic_cohort(spec: SynthCohortSpec) -> Iterator[tuple[Recording, float, int]]:
    """Yield ``(recording, score, planted_class)`` per subject, deterministically."""
    root = np.random.default_rng(spec.seed)
    n = spec.n_subjects
    classes = np.zeros(n, dtype=int)
    classes[root.permutation(n)[: n // 2]] = 1
    score_noise = root.uniform(-4.0, 4.0, size=n)
    children = np.random.SeedSequence(spec.seed).spawn(n)
    n_samples = round(spec.rate_hz * spec.duration_s)
    e = spec.effect_strength
    for i in range(n):
        rng = np.random.default_rng(children[i])
        cls = int(classes[i])
        gain = 1.0 + 0.5 * e * cls
        band_rms = []
        for name, lo, hi, rms in SYNTH_BANDS:
            rms = rms * np.exp(SUBJECT_BAND_SPREAD * rng.standard_normal())
            if name == "alpha":
                rms *= np.sqrt(gain)
            band_rms.append(((lo, hi), rms))
        eeg = _band_noise(rng, n_samples, spec.rate_hz, band_rms) + _spindles(rng, n_samples, spec.rate_hz)
        ref = 3.0 * rng.standard_normal(n_samples)
        hr = rng.uniform(50.0, 90.0)
        rr = synthetic_rr_ms(rng, spec.duration_s, hr, jitter_ms=20.0 * gain)
        beats = np.cumsum(rr) / 1000.0 - rr[0] / 2000.0
        ecg = impulse_ecg(beats, n_samples, spec.rate_hz) + 0.01 * rng.standard_normal(n_samples)
        rec = Recording.from_channels(
            f"synth-{i:03d}",
            {
                EEG_CHANNEL: (eeg + ref).astype(np.float32),
                REF_CHANNEL: ref.astype(np.float32),
                ECG_CHANNEL: ecg.astype(np.float32),
            },
            spec.rate_hz,
        )
        score = 50.0 + e * 20.0 * (cls - 0.5) + float(score_noise[i])
        yield rec, score, cls


def generate_synthetic_cohort(spec: SynthCohortSpec):
    recordings, scores, labels = [], {}, {}
    for rec, score, cls in iter_synthetic_cohort(spec):
        recordings.append(rec)
        scores[rec.subject_id] = score
        labels[rec.subject_id] = cls
    return recordings, scores, labels

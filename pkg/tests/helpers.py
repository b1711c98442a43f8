"""Shared builders for the test suite."""
import numpy as np
import torch

from cogpsg.model import ModelConfig, StreamConfig
from cogpsg.model.architectures import FEATURE_WIDTHS
from cogpsg.psg_io import Recording


def make_recording(sid="s01", rate=70.0, seconds=60.0, channels=("C3", "M2", "ECG-I"), seed=0):
    r = np.random.default_rng(seed)
    n = int(round(rate * seconds))
    return Recording.from_channels(sid, {c: r.standard_normal(n).astype(np.float32) for c in channels}, rate)


def beat_train(bpm, seconds, rate=70.0, start_s=0.5):
    """Impulse-like ECG with one R peak per beat; returns ``(ecg, true_peak_indices)``."""
    period = 60.0 / bpm
    times = np.arange(start_s, seconds - 0.2, period)
    n = int(round(seconds * rate))
    idx = np.round(times * rate).astype(int)
    x = np.zeros(n)
    sigma = 0.01 * rate
    k = np.exp(-0.5 * (np.arange(-3, 4) / sigma) ** 2)
    for i in idx:
        lo, hi = max(0, i - 3), min(n, i + 4)
        x[lo:hi] += k[lo - (i - 3):hi - (i - 3)]
    return x, idx


def feature_rows(s_eeg):
    """hrv_time / hrv_freq row counts matching ``s_eeg`` 30-s EEG segments."""
    seconds = 30 * s_eeg
    return {"eeg_power": s_eeg, "hrv_time": (seconds - 120) // 60 + 1, "hrv_freq": (seconds - 300) // 150 + 1}


def random_batch(b, s_eeg, t_eeg, s_ecg, t_ecg, rows=None, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    rows = rows or feature_rows(s_eeg)
    batch = {
        "eeg_raw": torch.randn(b, s_eeg, t_eeg, generator=g, dtype=dtype),
        "ecg_raw": torch.randn(b, s_ecg, t_ecg, generator=g, dtype=dtype),
    }
    for key, width in FEATURE_WIDTHS.items():
        batch[key] = torch.randn(b, rows[key], width, generator=g, dtype=dtype)
    return batch


def tiny_config(variant="ms-sc-shs", d=8, t_eeg=32, t_ecg=32, dropout=0.0):
    return ModelConfig(
        variant=variant,
        raw_stream=StreamConfig(d, 1, 2, 8, dropout),
        feat_stream=StreamConfig(d, 1, 2, 8, dropout),
        classifier_dim=8,
        eeg_segment_len=t_eeg,
        ecg_segment_len=t_ecg,
        lstm_hidden=8,
    )


def gradient_check(model, batch, labels, n_per_tensor=8, h=1e-6, tol=1e-3, floor=1e-6, seed=0):
    """Central finite differences vs autograd on sampled parameter entries.

    Returns ``(n_pass, n_total, worst)``; relative error is
    ``|fd - an| / max(|fd|, |an|, floor)``.
    """
    model = model.double().train()
    batch = {k: v.double() for k, v in batch.items()}
    y = torch.as_tensor(labels, dtype=torch.float64)
    loss_fn = torch.nn.BCEWithLogitsLoss()

    def loss():
        return loss_fn(model.logits(batch), y)

    model.zero_grad()
    loss().backward()
    rng = np.random.default_rng(seed)
    n_pass = n_total = 0
    worst = 0.0
    with torch.no_grad():
        for p in model.parameters():
            flat = p.data.view(-1)
            grad = p.grad.view(-1).clone()
            for j in rng.choice(flat.numel(), size=min(n_per_tensor, flat.numel()), replace=False):
                orig = flat[j].item()
                flat[j] = orig + h
                up = loss().item()
                flat[j] = orig - h
                down = loss().item()
                flat[j] = orig
                fd = (up - down) / (2 * h)
                an = grad[j].item()
                err = abs(fd - an) / max(abs(fd), abs(an), floor)
                worst = max(worst, err)
                n_total += 1
                n_pass += err <= tol
    return n_pass, n_total, worst

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cogpsg.errors import ContainerError
from cogpsg.features import EEG_BANDS, multitaper_bandpower
from cogpsg.psg_io import (
    Recording,
    SynthCohortSpec,
    filter_cohort,
    generate_synthetic_cohort,
    read_recording,
    read_scores,
    resample,
    write_cohort,
    write_recording,
    write_scores,
)
from helpers import make_recording

REQ = ("C3", "M2", "ECG-I")


def test_roundtrip_exact(tmp_path):
    rec = make_recording(rate=256.0, seconds=10.0)
    write_recording(tmp_path / "a.psg", rec)
    back = read_recording(tmp_path / "a.psg")
    assert back.subject_id == rec.subject_id
    assert list(back.channels) == list(rec.channels)
    assert back.rate_hz == 256.0
    for k in rec.channels:
        assert np.array_equal(back.channels[k], rec.channels[k])


def test_sample_count_from_rate_and_duration(tmp_path):
    n = 256 * 7200
    rec = Recording.from_channels("x", {c: np.zeros(n, np.float32) + 1 for c in REQ}, 256.0)
    write_recording(tmp_path / "x.psg", rec)
    back = read_recording(tmp_path / "x.psg")
    assert len(back.channels) == 3
    assert all(len(v) == 1_843_200 for v in back.channels.values())
    assert back.duration_s == 7200.0


def test_zero_channels_is_empty(tmp_path):
    p = tmp_path / "e.psg"
    p.write_bytes(struct.pack("<I", 1) + b"e" + struct.pack("<dI", 70.0, 0))
    with pytest.raises(ContainerError) as ei:
        read_recording(p)
    assert ei.value.code == "EMPTY"


def test_truncated_container_unreadable(tmp_path):
    rec = make_recording(seconds=2.0)
    p = write_recording(tmp_path / "t.psg", rec)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ContainerError) as ei:
        read_recording(p)
    assert ei.value.code == "UNREADABLE"


def test_synthetic_roundtrip_bit_identical(tmp_path):
    recs, scores, _ = generate_synthetic_cohort(SynthCohortSpec(3, 60.0, 70.0, 1.0, 5))
    write_cohort(tmp_path, recs, scores)
    for rec in recs:
        back = read_recording(tmp_path / f"{rec.subject_id}.psg")
        for k, v in rec.channels.items():
            assert back.channels[k].tobytes() == v.tobytes()
    assert read_scores(tmp_path / "scores.csv") == scores


def test_scores_need_header(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("a,1\n")
    with pytest.raises(ContainerError):
        read_scores(p)
    write_scores(p, {"b": 2.5, "a": 1.0})
    assert p.read_text().splitlines()[0] == "subject_id,score"


def test_resample_length():
    assert len(resample(np.zeros(1000), 256.0, 70.0)) == 273


def test_resample_identity():
    x = np.random.default_rng(0).standard_normal(500)
    assert np.sqrt(np.mean((resample(x, 70.0, 70.0) - x) ** 2)) < 1e-9


def test_resample_sinusoid_fft_oracle():
    fs = 256.0
    t = np.arange(int(20 * fs)) / fs
    y = resample(np.sin(2 * np.pi * 5.0 * t), fs, 70.0)
    spec = np.abs(np.fft.rfft(y)) * 2 / len(y)
    freqs = np.fft.rfftfreq(len(y), 1 / 70.0)
    k = int(np.argmax(spec))
    assert abs(freqs[k] - 5.0) < 1e-9
    assert abs(spec[k] - 1.0) < 0.02


@settings(max_examples=30, deadline=None)
@given(n=st.integers(50, 3000), fr=st.sampled_from([100.0, 128.0, 200.0, 256.0, 500.0, 512.0]))
def test_resample_preserves_duration(n, fr):
    y = resample(np.ones(n), fr, 70.0)
    assert abs(len(y) / 70.0 - n / fr) <= 1 / 70.0


def _rec(sid, channels=REQ, seconds=100.0, zero=None):
    rec = make_recording(sid, seconds=seconds, channels=channels)
    if zero is not None:
        ch, frac = zero
        x = rec.channels[ch]
        x[: int(frac * len(x))] = 0.0
    return rec


def test_filter_rules():
    recs = [
        _rec("a"),
        _rec("b", channels=("C3", "ECG-I")),
        _rec("c", zero=("ECG-I", 0.95)),
        _rec("d"),
        _rec("e", seconds=50.0),
    ]
    m = filter_cohort(recs, {"a": 1.0, "b": 2.0, "c": 3.0, "e": 4.0}, REQ, min_duration_s=100.0)
    assert m.included == ["a"]
    assert dict(m.excluded) == {"b": "MISSING_CHANNEL", "c": "CORRUPT_SIGNAL", "d": "NO_SCORE", "e": "TOO_SHORT"}
    assert m.score_table == {"a": 1.0}


def test_filter_zero_fraction_threshold_is_strict():
    ok = _rec("a", zero=("C3", 0.9))
    m = filter_cohort([ok], {"a": 0.0}, REQ, min_duration_s=1.0)
    assert m.included == ["a"]


def test_filter_all_valid():
    recs = [_rec(f"s{i}") for i in range(10)]
    m = filter_cohort(recs, {f"s{i}": float(i) for i in range(10)}, REQ, min_duration_s=100.0)
    assert len(m.included) == 10 and m.excluded == []


def test_filter_idempotent_and_order_independent():
    recs = [_rec("a"), _rec("b", channels=("C3",)), _rec("c")]
    scores = {"a": 1.0, "b": 1.0}
    m1 = filter_cohort(recs, scores, REQ, 100.0)
    m2 = filter_cohort(recs[::-1], scores, REQ, 100.0)
    kept = [r for r in recs if r.subject_id in m1.included]
    m3 = filter_cohort(kept, scores, REQ, 100.0)
    assert m1 == m2
    assert m3.included == m1.included and m3.excluded == []


def test_synthetic_deterministic():
    spec = SynthCohortSpec(4, 600.0, 70.0, 1.0, 7)
    a, sa, la = generate_synthetic_cohort(spec)
    b, sb, lb = generate_synthetic_cohort(spec)
    assert sa == sb and la == lb
    for ra, rb in zip(a, b):
        for k in ra.channels:
            assert ra.channels[k].tobytes() == rb.channels[k].tobytes()


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SynthCohortSpec(1)
    with pytest.raises(ValueError):
        SynthCohortSpec(4, effect_strength=1.5)


def test_synthetic_channels_and_lengths():
    recs, scores, labels = generate_synthetic_cohort(SynthCohortSpec(4, 120.0, 70.0, 1.0, 3))
    for rec in recs:
        assert set(rec.channels) == set(REQ)
        assert all(len(v) == 8400 for v in rec.channels.values())
    assert sum(labels.values()) == 2


def test_median_split_recovers_planted_class_at_full_effect():
    _, scores, labels = generate_synthetic_cohort(SynthCohortSpec(20, 30.0, 70.0, 1.0, 2))
    med = np.median(list(scores.values()))
    assert all(int(scores[s] > med) == labels[s] for s in scores)


@pytest.mark.slow
def test_null_effect_label_agreement_chance():
    _, scores, labels = generate_synthetic_cohort(SynthCohortSpec(200, 30.0, 70.0, 0.0, 4))
    med = np.median(list(scores.values()))
    agree = sum(int(scores[s] > med) == labels[s] for s in scores)
    lo, hi = stats.binom.ppf([0.025, 0.975], 200, 0.5)
    assert lo <= agree <= hi


@pytest.mark.slow
def test_alpha_power_higher_in_planted_high_group():
    recs, _, labels = generate_synthetic_cohort(SynthCohortSpec(64, 300.0, 70.0, 1.0, 9))
    alpha = {}
    for rec in recs:
        eeg = (rec.channels["C3"] - rec.channels["M2"]).astype(np.float64)
        seg = eeg[: 10 * 2100].reshape(10, 2100)
        p, _ = multitaper_bandpower(seg, 70.0)
        alpha[rec.subject_id] = p[:, [b.name for b in EEG_BANDS].index("alpha")].mean()
    hi = [alpha[s] for s in alpha if labels[s] == 1]
    lo = [alpha[s] for s in alpha if labels[s] == 0]
    assert stats.ttest_ind(hi, lo, equal_var=False, alternative="greater").pvalue < 0.01

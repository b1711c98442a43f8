import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cogpsg import training
from cogpsg.errors import TrainingError
from cogpsg.model import VARIANT_ORDER, Variant, build_architecture
from cogpsg.training import (
    SEARCH_SPACE,
    SELECTED,
    AblationReport,
    FoldPlan,
    SubjectData,
    TrainSpec,
    accuracy_f1,
    binarize_labels,
    check_disjoint,
    evaluate,
    make_folds,
    run_ablation,
    search_hyperparameters,
    train_fold,
)
from cogpsg.model.architectures import FEATURE_WIDTHS as WIDTHS
from helpers import tiny_config

ROWS = {"eeg_power": 4, "hrv_time": 3, "hrv_freq": 2}


def separable_data(n=8, seed=0, gap=1.5):
    """Class shifts the EEG amplitude and every feature row; linearly separable by construction."""
    rng = np.random.default_rng(seed)
    labels = np.array([i % 2 for i in range(n)])
    sign = (2 * labels - 1)[:, None, None]
    arrays = {
        "eeg_raw": (rng.standard_normal((n, 4, 32)) * (1 + 0.5 * labels[:, None, None])).astype(np.float32),
        "ecg_raw": rng.standard_normal((n, 4, 32)).astype(np.float32),
    }
    for k, rows in ROWS.items():
        arrays[k] = (0.3 * rng.standard_normal((n, rows, WIDTHS[k])) + gap * sign).astype(np.float32)
    return SubjectData([f"s{i:02d}" for i in range(n)], arrays, labels)


def test_binarize_examples():
    lab = binarize_labels({"a": 1, "b": 2, "c": 3, "d": 4, "e": 5})
    assert lab.threshold == 3 and lab.labels == {"a": 0, "b": 0, "c": 0, "d": 1, "e": 1}
    assert set(binarize_labels({k: 7.0 for k in "abc"}).labels.values()) == {0}
    lab = binarize_labels({"a": 1, "b": 2, "c": 3, "d": 4})
    assert lab.threshold == 2.5 and lab.labels == {"a": 0, "b": 0, "c": 1, "d": 1}


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-30, 30), min_size=2, max_size=40))
def test_binarize_monotone_invariant(values):
    scores = {f"s{i}": v for i, v in enumerate(values)}
    a = binarize_labels(scores).labels
    b = binarize_labels({k: v ** 3 + 2 * v + 7 for k, v in scores.items()}).labels
    assert a == b


def test_folds_817():
    plan = make_folds([f"p{i:04d}" for i in range(817)], k=10, seed=3)
    sizes = sorted(len(f) for f in plan.folds)
    assert set(sizes) == {81, 82} and sizes.count(82) == 7
    everyone = [s for f in plan.folds for s in f]
    assert len(everyone) == 817 and len(set(everyone)) == 817


def test_folds_deterministic_and_tuning_split():
    ids = [f"s{i}" for i in range(40)]
    a, b = make_folds(ids, 4, 9), make_folds(ids, 4, 9)
    assert a.folds == b.folds and a.tune == b.tune
    assert make_folds(ids, 4, 10).folds != a.folds
    for i in range(4):
        train, tune, test = a.split(i)
        assert len(tune) == round(0.15 * 30)
        assert set(train) | set(tune) | set(test) == set(ids)
        assert not set(train) & set(test)


def test_folds_too_few():
    with pytest.raises(TrainingError) as ei:
        make_folds(["a", "b"], k=3)
    assert ei.value.code == "TOO_FEW_SUBJECTS"


def test_leakage_detected():
    with pytest.raises(TrainingError) as ei:
        check_disjoint(["a", "b"], ["b", "c"])
    assert ei.value.code == "SUBJECT_LEAKAGE"
    bad = FoldPlan(folds=[["a", "b"], ["c", "a"]], tune=[[], []], k=2)
    with pytest.raises(TrainingError):
        bad.split(0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_metrics_match_confusion_oracle(pairs):
    pred, lab = map(np.array, zip(*pairs))
    tp = fp = fn = tn = 0
    for p, y in pairs:
        tp += p == 1 and y == 1
        fp += p == 1 and y == 0
        fn += p == 0 and y == 1
        tn += p == 0 and y == 0
    acc, f1 = accuracy_f1(pred, lab)
    assert acc == pytest.approx((tp + tn) / len(pairs))
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    assert f1 == pytest.approx(2 * prec * rec / (prec + rec) if prec + rec else 0.0)


def test_metrics_examples():
    y = np.array([0, 1] * 5)
    assert accuracy_f1(y, y) == (1.0, 1.0)
    assert accuracy_f1(1 - y, y) == (0.0, 0.0)


def test_probability_half_is_class_zero():
    data = separable_data()
    model = build_architecture(tiny_config(), seed=0)
    for p in model.classifier.parameters():
        torch.nn.init.zeros_(p)
    probs = training.predict_proba(model, data)
    assert np.all(probs == 0.5)
    acc, _ = evaluate(model, data, labels=np.zeros(len(data)))
    assert acc == 1.0


def test_overfit_tiny_separable():
    data = separable_data()
    model, res = train_fold(tiny_config(), TrainSpec(lr=1e-3, epochs=70, batch_size=4, seed=0), data)
    assert evaluate(model, data)[0] == 1.0
    assert len(res.loss_curve) == 70


def test_loss_nonincreasing_after_warmup():
    data = separable_data()
    _, res = train_fold(tiny_config(), TrainSpec(lr=1e-3, epochs=40, batch_size=8, seed=0), data)
    curve = np.array(res.loss_curve)
    assert np.all(np.diff(curve[5:]) <= 1e-3)


def test_zero_lr_keeps_parameters():
    data = separable_data()
    before = build_architecture(tiny_config(), seed=0).state_dict()
    model, res = train_fold(tiny_config(), TrainSpec(lr=0.0, epochs=3, batch_size=8, seed=0), data)
    after = dict(model.named_parameters())
    assert all(torch.equal(before[k], after[k]) for k in after)
    assert np.allclose(res.loss_curve, res.loss_curve[0], rtol=1e-5)


def test_training_deterministic():
    data = separable_data()
    spec = TrainSpec(lr=1e-3, epochs=5, batch_size=4, seed=2)
    _, a = train_fold(tiny_config(dropout=0.1), spec, data)
    _, b = train_fold(tiny_config(dropout=0.1), spec, data)
    assert a.loss_curve == b.loss_curve


def test_nan_loss_aborts():
    data = separable_data()
    data.arrays["hrv_time"][0, 0, 0] = np.nan
    with pytest.raises(TrainingError) as ei:
        train_fold(tiny_config(), TrainSpec(lr=1e-3, epochs=1, batch_size=8), data)
    assert ei.value.code == "NAN_LOSS"


def test_train_val_must_be_disjoint():
    data = separable_data()
    with pytest.raises(TrainingError):
        train_fold(tiny_config(), TrainSpec(epochs=1), data, data.subset(data.ids[:2]))


def test_train_spec_validation():
    with pytest.raises(TrainingError):
        TrainSpec(lr=-1)
    with pytest.raises(TrainingError):
        TrainSpec(epochs=0)


def test_search_space_contains_selected():
    for k, v in SELECTED.items():
        assert v in SEARCH_SPACE[k] or any(np.isclose(v, x) for x in SEARCH_SPACE[k])
    assert np.allclose(sorted(SEARCH_SPACE["lr"]), [1e-5, 10 ** -4.5, 1e-4, 10 ** -3.5, 1e-3])


def test_search_budget_one_and_collapsed():
    seen = []
    best, hist = search_hyperparameters(SEARCH_SPACE, 1, lambda a: seen.append(a) or 0.3, seed=0)
    assert best == seen[0] and len(hist) == 1
    point = {k: [v] for k, v in SELECTED.items()}
    best, _ = search_hyperparameters(point, 5, lambda a: np.random.rand(), seed=1)
    assert best == SELECTED


def test_search_ties_keep_earliest():
    best, hist = search_hyperparameters(SEARCH_SPACE, 6, lambda a: 0.5, seed=4)
    assert best == hist[0][0]


def test_search_picks_best():
    best, hist = search_hyperparameters(SEARCH_SPACE, 10, lambda a: a["lr"] + a["dropout"], seed=0)
    assert best == max(hist, key=lambda h: h[1])[0]


def test_ablation_fold_means_and_order():
    data = separable_data(n=12)
    cfgs = [tiny_config("ms-sc-shs"), tiny_config("vanilla-feat")]
    rep = run_ablation(cfgs, data, k=3, seed=0, spec=TrainSpec(lr=1e-3, epochs=2, batch_size=4))
    assert [r.variant for r in rep.rows] == [Variant.VANILLA_FEAT, Variant.MS_SC_SHS]
    for row in rep.rows:
        assert len(row.folds) == 3 and row.status == "OK"
        assert row.mean_accuracy == pytest.approx(np.mean([f.accuracy for f in row.folds]))
        assert all(0 <= f.accuracy <= 1 and 0 <= f.f1 <= 1 for f in row.folds)
        assert all(len(f.loss_curve) == 2 for f in row.folds)


def test_ablation_failing_fold_marks_incomplete(monkeypatch):
    real = training.train_fold

    def flaky(cfg, spec, train, val=None, fold_index=0):
        if fold_index == 1:
            raise TrainingError("boom", code="NAN_LOSS")
        return real(cfg, spec, train, val, fold_index)

    monkeypatch.setattr(training, "train_fold", flaky)
    rep = run_ablation([tiny_config()], separable_data(n=12), k=3, seed=0, spec=TrainSpec(epochs=1))
    row = rep.rows[0]
    assert row.status == "INCOMPLETE"
    assert [f.status for f in row.folds] == ["OK", "FAILED", "OK"]
    assert "fold 1" in row.folds[1].message


def test_ablation_deterministic_and_serializable():
    data = separable_data(n=12)
    spec = TrainSpec(lr=1e-3, epochs=2, batch_size=4)
    a = run_ablation([tiny_config()], data, k=3, seed=5, spec=spec)
    b = run_ablation([tiny_config()], data, k=3, seed=5, spec=spec)
    assert a.to_dict() == b.to_dict()
    assert AblationReport.from_dict(a.to_dict()).to_dict() == a.to_dict()


def test_ablation_with_search_records_choice(monkeypatch):
    data = separable_data(n=12)
    small = {k: [v[0]] for k, v in SEARCH_SPACE.items()}
    small.update(d_model_raw=[8], d_model_feat=[8], heads=[4], ffn_raw=[8], ffn_feat=[8], classifier_dim=[8],
                 layers_raw=[1], layers_feat=[1])
    monkeypatch.setattr(training, "SEARCH_SPACE", small)
    rep = run_ablation([tiny_config()], data, k=3, seed=0, spec=TrainSpec(epochs=1), search_budget=2,
                       search_epochs=1)
    assert all(f.chosen_hp["lr"] == small["lr"][0] for f in rep.rows[0].folds)


def test_variant_order_matches_reference_table():
    assert [v.value for v in VARIANT_ORDER] == [
        "vanilla-raw", "vanilla-feat", "vanilla-mixed", "lstm-mixed",
        "single-scale", "ms-shc-shs", "ms-sc-shs", "ms-sc-ss",
    ]

"""Median-split labels, subject-wise folds, the Adam/BCE training loop,
random hyperparameter search and the ablation harness."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
from torch import nn

from cogpsg.errors import ModelError, TrainingError
from cogpsg.model import (
    VARIANT_LABELS,
    VARIANT_ORDER,
    ModelConfig,
    StreamConfig,
    Variant,
    build_architecture,
)
from cogpsg.model.architectures import ConvEmbedConfig

log = logging.getLogger(__name__)

SEARCH_SPACE = {
    "layers_raw": [2, 3, 4],
    "layers_feat": [2, 3, 4],
    "heads": [4, 8],
    "ffn_raw": [92, 128, 256, 512],
    "ffn_feat": [8, 16, 32],
    "d_model_raw": [32, 64, 128],
    "d_model_feat": [8, 16],
    "dropout": [0.01, 0.05, 0.1, 0.2],
    "classifier_dim": [92, 128, 256],
    "lr": [float(v) for v in np.logspace(-5, -3, 5)],
}
SELECTED = {
    "layers_raw": 3,
    "layers_feat": 4,
    "heads": 4,
    "ffn_raw": 92,
    "ffn_feat": 8,
    "d_model_raw": 64,
    "d_model_feat": 8,
    "dropout": 0.05,
    "classifier_dim": 92,
    "lr": 1e-4,
}


# ---------------------------------------------------------------- labels

@dataclass
class LabeledCohort:
    subjects: list[str]
    labels: dict[str, int]
    threshold: float


def binarize_labels(scores) -> LabeledCohort:
    """Label 1 iff score > cohort median (ties go to the low class)."""
    if len(scores) < 2:
        raise TrainingError("need at least 2 subjects", code="TOO_FEW_SUBJECTS")
    subjects = sorted(scores)
    threshold = float(np.median([scores[s] for s in subjects]))
    labels = {s: int(scores[s] > threshold) for s in subjects}
    return LabeledCohort(subjects, labels, threshold)


# ---------------------------------------------------------------- folds

def check_disjoint(train_ids, test_ids):
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise TrainingError(f"subjects on both sides of a split: {sorted(overlap)[:5]}", code="SUBJECT_LEAKAGE")


@dataclass
class FoldPlan:
    folds: list[list[str]]
    tune: list[list[str]]
    k: int = 10
    tune_fraction: float = 0.15

    def split(self, i):
        """``(train, tune, test)`` subject lists for round ``i``."""
        test = list(self.folds[i])
        tune = list(self.tune[i])
        pool = [s for j, f in enumerate(self.folds) if j != i for s in f]
        tune_set = set(tune)
        train = [s for s in pool if s not in tune_set]
        check_disjoint(train, test)
        check_disjoint(tune, test)
        check_disjoint(train, tune)
        return train, tune, test


def make_folds(subjects, k=10, seed=0, tune_fraction=0.15) -> FoldPlan:
    subjects = sorted(subjects)
    if len(subjects) < k:
        raise TrainingError(f"{len(subjects)} subjects < k={k}", code="TOO_FEW_SUBJECTS")
    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    folds = [list(chunk) for chunk in np.array_split(np.array(order, dtype=object), k)]
    tune = []
    for i in range(k):
        pool = [s for j, f in enumerate(folds) if j != i for s in f]
        n_tune = int(round(tune_fraction * len(pool)))
        pick = np.random.default_rng([seed, i]).permutation(len(pool))[:n_tune]
        tune.append(sorted(pool[j] for j in pick))
    return FoldPlan(folds, tune, k, tune_fraction)


# ---------------------------------------------------------------- data

@dataclass
class SubjectData:
    """Stacked per-subject arrays ``{key: [N, ...]}`` with labels in the same order."""

    ids: list[str]
    arrays: dict[str, np.ndarray]
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)

    def subset(self, ids):
        pos = {s: i for i, s in enumerate(self.ids)}
        idx = np.array([pos[s] for s in ids], dtype=int)
        return SubjectData(list(ids), {k: v[idx] for k, v in self.arrays.items()}, self.labels[idx])

    def batch(self, idx, keys, dtype=torch.float32):
        return {k: torch.as_tensor(self.arrays[k][idx], dtype=dtype) for k in keys}


@dataclass
class TrainSpec:
    lr: float = 1e-4
    epochs: int = 70
    batch_size: int = 4
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("lr >= 0, epochs >= 1, batch_size >= 1 required", code="INVALID_SPEC")


@dataclass
class FoldResult:
    fold_index: int
    accuracy: float = float("nan")
    f1: float = float("nan")
    loss_curve: list[float] = field(default_factory=list)
    chosen_hp: dict = field(default_factory=dict)
    val_accuracy: float | None = None
    status: str = "OK"
    message: str = ""

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- metrics

def accuracy_f1(pred, labels):
    pred = np.asarray(pred).astype(int)
    labels = np.asarray(labels).astype(int)
    if len(labels) == 0:
        return float("nan"), float("nan")
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    acc = float(np.mean(pred == labels))
    denom = 2 * tp + fp + fn
    f1 = 2.0 * tp / denom if denom else 0.0
    return acc, f1


def predict_proba(model, data: SubjectData, batch_size=4):
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    with torch.no_grad():
        for a in range(0, len(data), batch_size):
            idx = np.arange(a, min(a + batch_size, len(data)))
            out.append(model(data.batch(idx, model.inputs, dtype)).cpu().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model, data: SubjectData, labels=None, threshold=0.5):
    """Accuracy and positive-class F1; probabilities exactly at ``threshold`` count as 0."""
    labels = data.labels if labels is None else np.asarray(labels)
    prob = predict_proba(model, data)
    return accuracy_f1((prob > threshold).astype(int), labels)


# ---------------------------------------------------------------- training

def train_fold(cfg: ModelConfig, spec: TrainSpec, train_data: SubjectData, val_data: SubjectData | None = None,
               fold_index=0):
    """Train from scratch for ``spec.epochs`` epochs; the final-epoch model is returned."""
    if val_data is not None:
        check_disjoint(train_data.ids, val_data.ids)
    if len(train_data) == 0:
        raise TrainingError("empty training set", code="TOO_FEW_SUBJECTS")
    model = build_architecture(cfg, seed=spec.seed)
    opt = torch.optim.Adam(model.parameters(), lr=spec.lr, betas=tuple(spec.betas))
    loss_fn = nn.BCEWithLogitsLoss(reduction="sum")
    rng = np.random.default_rng(spec.seed)
    y_all = torch.as_tensor(train_data.labels, dtype=torch.float32)
    curve = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(spec.seed)
        for epoch in range(spec.epochs):
            model.train()
            order = rng.permutation(len(train_data))
            total = 0.0
            for a in range(0, len(order), spec.batch_size):
                idx = order[a:a + spec.batch_size]
                batch = train_data.batch(idx, model.inputs)
                loss = loss_fn(model.logits(batch), y_all[idx])
                if not torch.isfinite(loss):
                    raise TrainingError(f"fold {fold_index} epoch {epoch}: loss is {loss.item()}",
                                        code="NAN_LOSS")
                opt.zero_grad()
                (loss / len(idx)).backward()
                opt.step()
                total += loss.item()
            curve.append(total / len(order))
            log.debug("fold %d epoch %d loss %.5f", fold_index, epoch, curve[-1])
    result = FoldResult(fold_index=fold_index, loss_curve=curve)
    if val_data is not None and len(val_data):
        result.val_accuracy = evaluate(model, val_data)[0]
    return model, result


# ---------------------------------------------------------------- search

def sample_assignment(space, rng):
    return {k: v[int(rng.integers(len(v)))] for k, v in space.items()}


def search_hyperparameters(space, budget, objective, seed=0):
    """Random search; returns ``(best_assignment, history)``.

    ``objective(assignment) -> tuning accuracy``; ties keep the earliest draw.
    """
    if budget < 1:
        raise TrainingError("budget must be >= 1", code="INVALID_SPEC")
    rng = np.random.default_rng(seed)
    best, best_score, history = None, -math.inf, []
    for _ in range(budget):
        a = sample_assignment(space, rng)
        score = float(objective(a))
        history.append((a, score))
        if score > best_score:
            best, best_score = a, score
    return best, history


def apply_assignment(cfg: ModelConfig, spec: TrainSpec, a):
    """Model config and train spec with a search assignment substituted in."""
    raw = StreamConfig(a["d_model_raw"], a["layers_raw"], a["heads"], a["ffn_raw"], a["dropout"])
    feat = StreamConfig(a["d_model_feat"], a["layers_feat"], a["heads"], a["ffn_feat"], a["dropout"])
    conv = replace(cfg.conv, d_conv=None)
    return replace(cfg, raw_stream=raw, feat_stream=feat, conv=conv, classifier_dim=a["classifier_dim"]), \
        replace(spec, lr=a["lr"])


def model_config_from_section(section, eeg_segment_len=2100, ecg_segment_len=8400):
    """ModelConfig from the ``model`` section of an experiment config."""
    return ModelConfig(
        variant=Variant.parse(section.variant),
        raw_stream=StreamConfig(section.d_model_raw, section.layers_raw, section.heads, section.ffn_raw,
                                section.dropout),
        feat_stream=StreamConfig(section.d_model_feat, section.layers_feat, section.heads, section.ffn_feat,
                                 section.dropout),
        conv=ConvEmbedConfig(tuple(section.kernel_sizes), None, section.single_scale_kernel, section.bn_momentum),
        classifier_dim=section.classifier_dim,
        eeg_segment_len=eeg_segment_len,
        ecg_segment_len=ecg_segment_len,
        lstm_hidden=section.lstm_hidden,
        lstm_layers=section.lstm_layers,
        max_len=section.max_len,
    )


# ---------------------------------------------------------------- ablation

@dataclass
class VariantResult:
    variant: Variant
    folds: list[FoldResult]

    @property
    def label(self):
        return VARIANT_LABELS[self.variant]

    @property
    def status(self):
        return "OK" if self.folds and all(f.status == "OK" for f in self.folds) else "INCOMPLETE"

    @property
    def mean_accuracy(self):
        ok = [f.accuracy for f in self.folds if f.status == "OK"]
        return float(np.mean(ok)) if ok else float("nan")

    @property
    def mean_f1(self):
        ok = [f.f1 for f in self.folds if f.status == "OK"]
        return float(np.mean(ok)) if ok else float("nan")


@dataclass
class AblationReport:
    rows: list[VariantResult]
    k: int
    seed: int

    def sorted(self):
        return AblationReport(sorted(self.rows, key=lambda r: VARIANT_ORDER.index(r.variant)), self.k, self.seed)

    def to_dict(self):
        return {
            "k": self.k,
            "seed": self.seed,
            "rows": [{"variant": r.variant.value, "folds": [f.to_dict() for f in r.folds]} for r in self.rows],
        }

    @classmethod
    def from_dict(cls, d):
        rows = [VariantResult(Variant.parse(r["variant"]), [FoldResult(**f) for f in r["folds"]]) for r in d["rows"]]
        return cls(rows, d["k"], d["seed"])


def run_fold(cfg, spec, data: SubjectData, plan: FoldPlan, i, search_budget=0, search_epochs=None,
             on_model=None):
    """Train/evaluate one round of the plan, optionally searching on its tuning split."""
    train_ids, tune_ids, test_ids = plan.split(i)
    train, tune, test = data.subset(train_ids), data.subset(tune_ids), data.subset(test_ids)
    chosen = {}
    if search_budget:
        def objective(a):
            c, s = apply_assignment(cfg, spec, a)
            if search_epochs:
                s = replace(s, epochs=search_epochs)
            m, _ = train_fold(c, s, train, None, fold_index=i)
            return evaluate(m, tune)[0] if len(tune) else 0.0

        chosen, _ = search_hyperparameters(SEARCH_SPACE, search_budget, objective, seed=spec.seed + i)
        cfg, spec = apply_assignment(cfg, spec, chosen)
    model, result = train_fold(cfg, replace(spec, seed=spec.seed + i), train, tune, fold_index=i)
    result.accuracy, result.f1 = evaluate(model, test)
    result.chosen_hp = chosen
    if on_model is not None:
        on_model(i, model)
    return result


def run_ablation(variants, data: SubjectData, k=10, seed=0, spec: TrainSpec | None = None, tune_fraction=0.15,
                 search_budget=0, search_epochs=None, on_model=None) -> AblationReport:
    """k-fold CV for every variant; one failing fold marks its variant INCOMPLETE."""
    spec = spec or TrainSpec(seed=seed)
    plan = make_folds(data.ids, k, seed, tune_fraction)
    rows = []
    for cfg in variants:
        folds = []
        for i in range(k):
            try:
                cb = None if on_model is None else (lambda j, m, v=cfg.variant: on_model(v, j, m))
                folds.append(run_fold(cfg, spec, data, plan, i, search_budget, search_epochs, cb))
            except (TrainingError, ModelError) as exc:
                log.error("variant %s fold %d failed: %s", cfg.variant.value, i, exc)
                folds.append(FoldResult(fold_index=i, status="FAILED", message=f"fold {i}: {exc}"))
            log.info("%s fold %d: acc %.3f f1 %.3f", cfg.variant.value, i, folds[-1].accuracy, folds[-1].f1)
        rows.append(VariantResult(cfg.variant, folds))
    return AblationReport(rows, k, seed).sorted()

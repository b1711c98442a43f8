"""Experiment configuration.

One JSON document with sections ``data``, ``preprocess``, ``features``,
``model``, ``training`` and ``search``. Unknown keys are rejected; every
default below is the reference configuration.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from cogpsg.errors import ConfigError


@dataclass
class DataConfig:
    n_subjects: int = 16
    hours: float = 5.0
    rate_hz: float = 70.0
    effect_strength: float = 1.0
    required_channels: list = field(default_factory=lambda: ["C3", "M2", "ECG-I"])
    eeg_channel: str = "C3"
    reference_channel: str = "M2"
    ecg_channel: str = "ECG-I"
    corrupt_zero_fraction: float = 0.9


@dataclass
class PreprocessConfig:
    target_rate_hz: float = 70.0
    eeg_band_hz: list = field(default_factory=lambda: [0.3, 35.0])
    ecg_band_hz: list = field(default_factory=lambda: [0.5, 35.0])
    filter_order: int = 4
    filter_phase: str = "zero"
    nyquist_margin_hz: float = 0.5
    crop_s: float = 18000.0
    crop_anchor: str = "start"
    artifact_epoch_s: float = 5.0
    artifact_ptp_uv: float = 300.0
    artifact_std_factor: float = 5.0
    mask_fill: str = "zero"
    mask_ecg: bool = False
    raw_zscore_scope: str = "subject_channel"


@dataclass
class FeaturesConfig:
    eeg_window_s: float = 30.0
    ecg_window_s: float = 120.0
    time_hrv_window_s: float = 120.0
    time_hrv_step_s: float = 60.0
    freq_hrv_window_s: float = 300.0
    freq_hrv_step_s: float = 150.0
    multitaper_nw: float = 4.0
    multitaper_tapers: int = 7
    tachogram_hz: float = 4.0
    hr_range_bpm: list = field(default_factory=lambda: [40.0, 100.0])
    pnn_threshold_ms: float = 20.0
    sdrmssd: str = "sdnn_over_rmssd"
    feature_zscore_scope: str = "subject_feature"


@dataclass
class ModelSection:
    variant: str = "ms-sc-shs"
    d_model_raw: int = 64
    d_model_feat: int = 8
    layers_raw: int = 3
    layers_feat: int = 4
    heads: int = 4
    ffn_raw: int = 92
    ffn_feat: int = 8
    dropout: float = 0.05
    classifier_dim: int = 92
    kernel_sizes: list = field(default_factory=lambda: [3, 7])
    weight_slice: str = "leading"
    single_scale_kernel: int = 7
    bn_momentum: float = 0.1
    bn_per_scale: bool = True
    positional_encoding: str = "sinusoidal"
    norm_order: str = "post"
    lstm_hidden: int = 64
    lstm_layers: int = 2
    max_len: int = 2048


@dataclass
class TrainingConfig:
    k_folds: int = 10
    tune_fraction: float = 0.15
    lr: float = 1e-4
    epochs: int = 70
    batch_size: int = 4
    adam_betas: list = field(default_factory=lambda: [0.9, 0.999])
    label_tie_rule: str = "low"
    decision_threshold: float = 0.5
    early_stopping: bool = False
    ablation: list = field(default_factory=list)


@dataclass
class SearchConfig:
    enabled: bool = False
    budget: int = 8
    epochs: int | None = None


_FIXED_CHOICES = {
    ("preprocess", "filter_phase"): {"zero"},
    ("preprocess", "crop_anchor"): {"start"},
    ("preprocess", "mask_fill"): {"zero"},
    ("preprocess", "raw_zscore_scope"): {"subject_channel"},
    ("features", "sdrmssd"): {"sdnn_over_rmssd"},
    ("features", "feature_zscore_scope"): {"subject_feature"},
    ("model", "weight_slice"): {"leading"},
    ("model", "positional_encoding"): {"sinusoidal"},
    ("model", "norm_order"): {"post"},
    ("training", "label_tie_rule"): {"low"},
    ("training", "early_stopping"): {False},
}

SECTIONS = {
    "data": DataConfig,
    "preprocess": PreprocessConfig,
    "features": FeaturesConfig,
    "model": ModelSection,
    "training": TrainingConfig,
    "search": SearchConfig,
}


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {"seed": int(d.get("seed", 0))}
        for name, klass in SECTIONS.items():
            section = d.get(name) or {}
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            allowed = {f.name for f in fields(klass)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            kwargs[name] = klass(**section)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        for (section, key), allowed in _FIXED_CHOICES.items():
            value = getattr(getattr(self, section), key)
            if value not in allowed:
                raise ConfigError(f"{section}.{key}={value!r}; supported: {sorted(map(str, allowed))}")
        if self.data.n_subjects < 2:
            raise ConfigError("data.n_subjects must be >= 2")
        if not 0 <= self.data.effect_strength <= 1:
            raise ConfigError("data.effect_strength must be in [0, 1]")
        if self.training.epochs < 1 or self.training.lr < 0:
            raise ConfigError("training.epochs >= 1 and training.lr >= 0 required")
        if self.training.k_folds < 2:
            raise ConfigError("training.k_folds must be >= 2")

    def section_hash(self, *names):
        payload = json.dumps({n: asdict(getattr(self, n)) for n in names}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def prepare_hash(self):
        """Key of the feature cache: upstream sections only."""
        return self.section_hash("data", "preprocess", "features")


def load_config(path=None, overrides=None) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if dotted == "seed":
            data["seed"] = value
            continue
        section, key = dotted.split(".", 1)
        data.setdefault(section, {})[key] = value
    return ExperimentConfig.from_dict(data)


def save_config(path, cfg):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

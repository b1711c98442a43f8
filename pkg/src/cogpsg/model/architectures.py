"""Architecture registry: the multi-scale conv-Transformer family, its
ablations and the vanilla Transformer / stacked LSTM baselines."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import torch
from torch import nn

from cogpsg.errors import ModelError
from cogpsg.model.layers import (
    Encoder,
    FusionClassifier,
    IndependentScaleConvEmbed,
    LinearEmbed,
    PositionalEncoding,
    SharedScaleConvEmbed,
    SingleScaleConvEmbed,
)

RAW_KEYS = ("eeg_raw", "ecg_raw")
FEATURE_KEYS = ("hrv_time", "hrv_freq", "eeg_power")
FEATURE_WIDTHS = {"hrv_time": 6, "hrv_freq": 5, "eeg_power": 6}


class Variant(str, Enum):
    VANILLA_RAW = "vanilla-raw"
    VANILLA_FEAT = "vanilla-feat"
    VANILLA_MIXED = "vanilla-mixed"
    LSTM_MIXED = "lstm-mixed"
    SINGLE_SCALE = "single-scale"
    MS_SHC_SHS = "ms-shc-shs"
    MS_SC_SHS = "ms-sc-shs"
    MS_SC_SS = "ms-sc-ss"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for v in cls:
            if key in (v.value, v.name.lower().replace("_", "-")):
                return v
        raise ModelError(f"unknown variant {value!r}", code="UNKNOWN_VARIANT")

    @property
    def inputs(self):
        if self is Variant.VANILLA_RAW:
            return RAW_KEYS
        if self is Variant.VANILLA_FEAT:
            return FEATURE_KEYS
        return RAW_KEYS + FEATURE_KEYS


# reporting order and display labels
VARIANT_LABELS = {
    Variant.VANILLA_RAW: "Vanilla Transformer (only raw)",
    Variant.VANILLA_FEAT: "Vanilla Transformer (only features)",
    Variant.VANILLA_MIXED: "Vanilla Transformer (mixed)",
    Variant.LSTM_MIXED: "Stacked LSTM (mixed)",
    Variant.SINGLE_SCALE: "Conv-Transformer single-scale (mixed)",
    Variant.MS_SHC_SHS: "Conv-Transformer MS-SHC-SHS (mixed)",
    Variant.MS_SC_SHS: "Conv-Transformer MS-SC-SHS (mixed)",
    Variant.MS_SC_SS: "Conv-Transformer MS-SC-SS (mixed)",
}
VARIANT_ORDER = tuple(VARIANT_LABELS)


@dataclass
class StreamConfig:
    d_model: int
    n_layers: int
    n_heads: int
    d_ffn: int
    dropout: float

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ModelError(f"d_model {self.d_model} not divisible by {self.n_heads}", code="DIM_MISMATCH")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout {self.dropout} outside [0, 1)", code="INVALID_CONFIG")


@dataclass
class ConvEmbedConfig:
    kernel_sizes: tuple[int, int] = (3, 7)
    d_conv: int | None = None  # None: half the raw d_model
    single_scale_kernel: int = 7
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        if len(self.kernel_sizes) != 2 or not self.kernel_sizes[0] < self.kernel_sizes[1]:
            raise ModelError(f"kernel sizes {self.kernel_sizes} must be (k1 < k2)", code="INVALID_CONFIG")


def _raw_default():
    return StreamConfig(d_model=64, n_layers=3, n_heads=4, d_ffn=92, dropout=0.05)


def _feat_default():
    return StreamConfig(d_model=8, n_layers=4, n_heads=4, d_ffn=8, dropout=0.05)


@dataclass
class ModelConfig:
    variant: Variant = Variant.MS_SC_SHS
    raw_stream: StreamConfig = field(default_factory=_raw_default)
    feat_stream: StreamConfig = field(default_factory=_feat_default)
    conv: ConvEmbedConfig = field(default_factory=ConvEmbedConfig)
    classifier_dim: int = 92
    eeg_segment_len: int = 2100
    ecg_segment_len: int = 8400
    lstm_hidden: int = 64
    lstm_layers: int = 2
    max_len: int = 2048

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        if isinstance(self.raw_stream, dict):
            self.raw_stream = StreamConfig(**self.raw_stream)
        if isinstance(self.feat_stream, dict):
            self.feat_stream = StreamConfig(**self.feat_stream)
        if isinstance(self.conv, dict):
            self.conv = ConvEmbedConfig(**self.conv)

    @property
    def d_conv(self):
        return self.conv.d_conv if self.conv.d_conv is not None else self.raw_stream.d_model // 2

    def to_dict(self):
        d = asdict(self)
        d["variant"] = self.variant.value
        d["conv"]["kernel_sizes"] = list(self.conv.kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def with_variant(self, variant):
        return replace(self, variant=Variant.parse(variant))


class Stream(nn.Module):
    """Embedding, then either positional encoding + Transformer encoder or an LSTM."""

    def __init__(self, embed, d_in, stack=None, lstm_hidden=None, lstm_layers=2, max_len=2048):
        super().__init__()
        self.embed = embed
        if stack is not None:
            self.pos = PositionalEncoding(d_in, max_len)
            self.encoder = Encoder(d_in, stack.n_layers, stack.n_heads, stack.d_ffn, stack.dropout)
            self.lstm = None
            self.out_dim = d_in
        else:
            self.pos = self.encoder = None
            self.lstm = nn.LSTM(d_in, lstm_hidden, num_layers=lstm_layers, batch_first=True)
            self.out_dim = lstm_hidden

    def forward(self, x):
        h = self.embed(x)
        if self.lstm is not None:
            h, _ = self.lstm(h)
            return h
        return self.encoder(self.pos(h))


class CogPSGModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        v = cfg.variant
        raw, feat = cfg.raw_stream, cfg.feat_stream
        lstm = v is Variant.LSTM_MIXED
        kw = dict(lstm_hidden=cfg.lstm_hidden, lstm_layers=cfg.lstm_layers, max_len=cfg.max_len)
        self.streams = nn.ModuleDict()

        def raw_embed(seg_len):
            if v in (Variant.VANILLA_RAW, Variant.VANILLA_MIXED, Variant.LSTM_MIXED):
                return LinearEmbed(seg_len, raw.d_model)
            if v is Variant.SINGLE_SCALE:
                return SingleScaleConvEmbed(raw.d_model, cfg.conv.single_scale_kernel, raw.dropout,
                                            cfg.conv.bn_momentum)
            if v in (Variant.MS_SC_SHS, Variant.MS_SHC_SHS):
                emb = SharedScaleConvEmbed(cfg.d_conv, cfg.conv.kernel_sizes, raw.dropout, cfg.conv.bn_momentum)
            else:
                emb = IndependentScaleConvEmbed(cfg.d_conv, cfg.conv.kernel_sizes, raw.dropout,
                                                cfg.conv.bn_momentum)
            if emb.out_dim != raw.d_model:
                raise ModelError(f"2*d_conv={emb.out_dim} != raw d_model {raw.d_model}", code="DIM_MISMATCH")
            return emb

        if v is Variant.MS_SHC_SHS:
            if cfg.ecg_segment_len % cfg.eeg_segment_len:
                raise ModelError("ECG segment length must be a multiple of the EEG one", code="DIM_MISMATCH")
            self.streams["eeg_ecg"] = Stream(raw_embed(cfg.eeg_segment_len), raw.d_model, raw, **kw)
        elif "eeg_raw" in v.inputs:
            for key, seg_len in (("eeg", cfg.eeg_segment_len), ("ecg", cfg.ecg_segment_len)):
                self.streams[key] = Stream(raw_embed(seg_len), raw.d_model, None if lstm else raw, **kw)
        if "hrv_time" in v.inputs:
            for key in FEATURE_KEYS:
                self.streams[key] = Stream(LinearEmbed(FEATURE_WIDTHS[key], feat.d_model), feat.d_model,
                                           None if lstm else feat, **kw)
        fused = sum(s.out_dim for s in self.streams.values())
        self.classifier = FusionClassifier(fused, cfg.classifier_dim)

    @property
    def inputs(self):
        return self.cfg.variant.inputs

    @property
    def fused_dim(self):
        return self.classifier.fused_dim

    def _check(self, batch):
        expect = {"eeg_raw": self.cfg.eeg_segment_len, "ecg_raw": self.cfg.ecg_segment_len, **FEATURE_WIDTHS}
        b = None
        for key in self.inputs:
            if key not in batch:
                raise ModelError(f"missing input {key!r}", code="SHAPE_MISMATCH")
            x = batch[key]
            if x.dim() != 3 or x.shape[-1] != expect[key]:
                raise ModelError(f"{key}: shape {tuple(x.shape)}, last dim should be {expect[key]}",
                                 code="SHAPE_MISMATCH")
            if b is None:
                b = x.shape[0]
            elif x.shape[0] != b:
                raise ModelError("inconsistent batch sizes", code="SHAPE_MISMATCH")

    def stream_inputs(self, batch):
        out = {}
        if "eeg_ecg" in self.streams:
            eeg, ecg = batch["eeg_raw"], batch["ecg_raw"]
            b, s, t = ecg.shape
            t30 = self.cfg.eeg_segment_len
            out["eeg_ecg"] = torch.cat([eeg, ecg.reshape(b, s * (t // t30), t30)], dim=1)
        if "eeg" in self.streams:
            out["eeg"], out["ecg"] = batch["eeg_raw"], batch["ecg_raw"]
        for key in FEATURE_KEYS:
            if key in self.streams:
                out[key] = batch[key]
        return out

    def encode_streams(self, batch):
        self._check(batch)
        return [self.streams[name](x) for name, x in self.stream_inputs(batch).items()]

    def logits(self, batch):
        return self.classifier.logits(self.encode_streams(batch))

    def forward(self, batch):
        return torch.sigmoid(self.logits(batch))


def build_architecture(cfg: ModelConfig, seed=None) -> CogPSGModel:
    if not isinstance(cfg.variant, Variant):
        cfg = replace(cfg, variant=Variant.parse(cfg.variant))
    if seed is None:
        return CogPSGModel(cfg)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return CogPSGModel(cfg)


def forward(model: CogPSGModel, batch, train_mode=False):
    """Probabilities ``[B]``; eval mode disables dropout and uses BN running stats."""
    model.train(train_mode)
    dtype = next(model.parameters()).dtype
    batch = {k: torch.as_tensor(v, dtype=dtype) for k, v in batch.items()}
    if train_mode:
        return model(batch)
    with torch.no_grad():
        return model(batch)


def count_parameters(model):
    return sum(p.numel() for p in model.parameters() if p.requires_grad)

"""Building blocks: convolutional segment embeddings, linear embeddings,
sinusoidal positional encoding and the post-norm Transformer encoder."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from cogpsg.errors import ModelError

# segments per conv call when no autograd graph is being built
EVAL_CHUNK = 128


def _check_segments(x, k_max):
    if x.dim() != 3:
        raise ModelError(f"expected [B, S, T], got {tuple(x.shape)}", code="SHAPE_MISMATCH")
    if x.shape[-1] < k_max:
        raise ModelError(f"segment length {x.shape[-1]} < kernel {k_max}", code="SEGMENT_TOO_SHORT")


def _fan_in_uniform_(tensor, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        tensor.uniform_(-bound, bound)
    return tensor


class _ConvEmbedBase(nn.Module):
    """Conv -> ReLU -> BatchNorm -> GAP per kernel, concatenated, then dropout."""

    def __init__(self, n_branches, d_conv, dropout, bn_momentum):
        super().__init__()
        self.d_conv = d_conv
        self.norms = nn.ModuleList(nn.BatchNorm1d(d_conv, momentum=bn_momentum) for _ in range(n_branches))
        self.dropout = nn.Dropout(dropout)

    def branch_weights(self):
        """``[(weight, bias), ...]`` one per branch."""
        raise NotImplementedError

    @property
    def out_dim(self):
        return self.d_conv * len(self.norms)

    def _pool(self, x, weight, bias, norm):
        # x: [N, 1, T]
        h = F.relu(F.conv1d(x, weight, bias))
        return norm(h).mean(dim=-1)

    def forward(self, x):
        branches = self.branch_weights()
        _check_segments(x, max(w.shape[-1] for w, _ in branches))
        b, s, t = x.shape
        flat = x.reshape(b * s, 1, t)
        chunked = not torch.is_grad_enabled() and not self.training and b * s > EVAL_CHUNK
        pooled = []
        for (w, bias), norm in zip(branches, self.norms):
            if chunked:
                p = torch.cat([self._pool(c, w, bias, norm) for c in flat.split(EVAL_CHUNK)])
            else:
                p = self._pool(flat, w, bias, norm)
            pooled.append(p)
        out = torch.cat(pooled, dim=-1).reshape(b, s, -1)
        return self.dropout(out)


class SharedScaleConvEmbed(_ConvEmbedBase):
    """One stored kernel of the largest size; smaller scales use its leading slice."""

    def __init__(self, d_conv, kernel_sizes=(3, 7), dropout=0.0, bn_momentum=0.1):
        kernel_sizes = tuple(sorted(kernel_sizes))
        super().__init__(len(kernel_sizes), d_conv, dropout, bn_momentum)
        self.kernel_sizes = kernel_sizes
        k_max = kernel_sizes[-1]
        self.weight = nn.Parameter(_fan_in_uniform_(torch.empty(d_conv, 1, k_max), k_max))
        self.bias = nn.Parameter(_fan_in_uniform_(torch.empty(d_conv), k_max))

    def branch_weights(self):
        return [(self.weight[:, :, :k], self.bias) for k in self.kernel_sizes]


class IndependentScaleConvEmbed(_ConvEmbedBase):
    """Separate weights and biases for every kernel size."""

    def __init__(self, d_conv, kernel_sizes=(3, 7), dropout=0.0, bn_momentum=0.1):
        kernel_sizes = tuple(sorted(kernel_sizes))
        super().__init__(len(kernel_sizes), d_conv, dropout, bn_momentum)
        self.kernel_sizes = kernel_sizes
        self.weights = nn.ParameterList(
            nn.Parameter(_fan_in_uniform_(torch.empty(d_conv, 1, k), k)) for k in kernel_sizes)
        self.biases = nn.ParameterList(
            nn.Parameter(_fan_in_uniform_(torch.empty(d_conv), k)) for k in kernel_sizes)

    def branch_weights(self):
        return list(zip(self.weights, self.biases))


class SingleScaleConvEmbed(IndependentScaleConvEmbed):
    def __init__(self, d_model, kernel_size=7, dropout=0.0, bn_momentum=0.1):
        super().__init__(d_model, (kernel_size,), dropout, bn_momentum)


class LinearEmbed(nn.Module):
    """Affine map applied independently at every time step."""

    def __init__(self, in_dim, d_model):
        super().__init__()
        self.proj = nn.Linear(in_dim, d_model)

    @property
    def out_dim(self):
        return self.proj.out_features

    def forward(self, x):
        if x.shape[-1] != self.proj.in_features:
            raise ModelError(f"expected {self.proj.in_features} features, got {x.shape[-1]}",
                             code="SHAPE_MISMATCH")
        return self.proj(x)


def sinusoidal_table(max_len, d_model, dtype=torch.float32):
    pos = torch.arange(max_len, dtype=torch.float64)[:, None]
    i2 = torch.arange(0, d_model, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i2 / d_model)
    pe = torch.zeros(max_len, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d_model // 2])
    return pe.to(dtype)


class PositionalEncoding(nn.Module):
    def __init__(self, d_model, max_len=2048):
        super().__init__()
        self.register_buffer("pe", sinusoidal_table(max_len, d_model), persistent=False)

    def forward(self, x):
        s = x.shape[1]
        if s > self.pe.shape[0]:
            raise ModelError(f"sequence of {s} > {self.pe.shape[0]}", code="SEQUENCE_TOO_LONG")
        return x + self.pe[:s].to(x.dtype)


class EncoderLayer(nn.Module):
    """``Z = LN(X + Drop(MHA(X)))``; ``H = LN(Z + Drop(FFN(Z)))``."""

    def __init__(self, d_model, n_heads, d_ffn, dropout):
        super().__init__()
        if d_model % n_heads:
            raise ModelError(f"d_model {d_model} not divisible by {n_heads} heads", code="DIM_MISMATCH")
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.ffn = nn.Sequential(nn.Linear(d_model, d_ffn), nn.ReLU(), nn.Linear(d_ffn, d_model))
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.drop1 = nn.Dropout(dropout)
        self.drop2 = nn.Dropout(dropout)

    def forward(self, x):
        a, _ = self.attn(x, x, x, need_weights=False)
        z = self.norm1(x + self.drop1(a))
        return self.norm2(z + self.drop2(self.ffn(z)))


class Encoder(nn.Module):
    def __init__(self, d_model, n_layers, n_heads, d_ffn, dropout):
        super().__init__()
        self.d_model = d_model
        self.layers = nn.ModuleList(EncoderLayer(d_model, n_heads, d_ffn, dropout) for _ in range(n_layers))

    def forward(self, x):
        if x.shape[-1] != self.d_model:
            raise ModelError(f"input dim {x.shape[-1]} != d_model {self.d_model}", code="DIM_MISMATCH")
        for layer in self.layers:
            x = layer(x)
        return x


class FusionClassifier(nn.Module):
    """Last time step of each stream, concatenated, through FFN + ReLU and a logit."""

    def __init__(self, fused_dim, hidden_dim):
        super().__init__()
        self.fused_dim = fused_dim
        self.hidden = nn.Linear(fused_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, 1)

    def fuse(self, streams):
        if not streams:
            raise ModelError("no streams to fuse", code="EMPTY_STREAMS")
        return torch.cat([s[:, -1, :] for s in streams], dim=-1)

    def logits(self, streams):
        h = self.fuse(streams)
        return self.out(F.relu(self.hidden(h))).squeeze(-1)

    def forward(self, streams):
        return torch.sigmoid(self.logits(streams))

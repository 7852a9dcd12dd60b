"""Spike-driven transformer pieces for the event branch.

Token tensors use the column layout ``(T, B, M, N)``: time steps, batch,
embedding channels, tokens. Every linear map inside a block reads binary
spikes from a LIF layer, which is what makes it accumulate-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class LifConfig:
    tau_decay: float = 0.5
    v_threshold: float = 1.0

    def __post_init__(self):
        if not 0 < self.tau_decay <= 1:
            raise ValueError("tau_decay must lie in (0, 1]")
        if not self.v_threshold > 0:
            raise ValueError("v_threshold must be positive")


@dataclass
class LifState:
    membrane: torch.Tensor
    config: LifConfig


def surrogate_grad(v: torch.Tensor, v_threshold: float = 1.0, width: float = 1.0) -> torch.Tensor:
    """Triangular window: peak 1 at threshold, zero beyond ``width``."""
    return torch.clamp(1.0 - torch.abs(v - v_threshold) / width, min=0.0) / width


def surrogate_primitive(v: torch.Tensor, v_threshold: float = 1.0, width: float = 1.0) -> torch.Tensor:
    """Smooth step whose derivative is :func:`surrogate_grad`."""
    z = torch.clamp((v - v_threshold) / width, -1.0, 1.0)
    return torch.where(z < 0, 0.5 * (1 + z) ** 2, 1.0 - 0.5 * (1 - z) ** 2)


class _SpikeFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, v, v_threshold):
        ctx.save_for_backward(v)
        ctx.v_threshold = v_threshold
        return (v >= v_threshold).to(v.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (v,) = ctx.saved_tensors
        return grad_out * surrogate_grad(v, ctx.v_threshold), None


def spike_fn(v: torch.Tensor, v_threshold: float) -> torch.Tensor:
    return _SpikeFn.apply(v, v_threshold)


def lif_step(state: LifState, inp: torch.Tensor) -> tuple[torch.Tensor, LifState]:
    """One decay-then-integrate update with hard reset to zero."""
    if state.membrane.shape != inp.shape:
        raise ValueError(f"membrane shape {tuple(state.membrane.shape)} != input shape {tuple(inp.shape)}")
    cfg = state.config
    v = cfg.tau_decay * state.membrane + inp
    s = spike_fn(v, cfg.v_threshold)
    # reset path is detached, as usual for spike-driven transformers
    v_new = v * (1.0 - s.detach())
    return s, LifState(v_new, cfg)


class LIF(nn.Module):
    """Multi-step LIF layer over the leading time axis.

    The membrane starts from zero on every call unless ``reset=False`` is
    passed, in which case it continues from :attr:`state`.
    """

    def __init__(self, tau_decay: float = 0.5, v_threshold: float = 1.0):
        super().__init__()
        self.config = LifConfig(tau_decay, v_threshold)
        self.state: LifState | None = None

    def forward(self, x_seq: torch.Tensor, reset: bool = True) -> torch.Tensor:
        if reset or self.state is None or self.state.membrane.shape != x_seq.shape[1:]:
            state = LifState(torch.zeros_like(x_seq[0]), self.config)
        else:
            state = self.state
        out = []
        for x in x_seq:
            s, state = lif_step(state, x)
            out.append(s)
        self.state = state
        return torch.stack(out)

    def extra_repr(self) -> str:
        return f"tau_decay={self.config.tau_decay}, v_threshold={self.config.v_threshold}"


def _seq(module: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Apply a per-step module to (T, B, ...) by folding time into batch."""
    t, b = x.shape[:2]
    y = module(x.flatten(0, 1))
    return y.reshape(t, b, *y.shape[1:])


class ConvBN1d(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int = 1):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c_out, kernel_size, padding=kernel_size // 2, bias=False)
        self.bn = nn.BatchNorm1d(c_out)

    def forward(self, x):
        return _seq(lambda z: self.bn(self.conv(z)), x)


def _split_patch(patch: int) -> tuple[int, int]:
    s1 = min(4, patch)
    if patch % s1:
        s1 = 1
    return s1, patch // s1


class SpikingTokenizer(nn.Module):
    """Two-stage patch embedding with shared ConvBN and per-input LIF banks.

    Template and search frames pass through the same convolution and
    normalisation weights; the LIF layer between the stages is duplicated so
    the two inputs keep separate membrane state.
    """

    def __init__(self, embed_dim: int, patch: int = 16, in_chans: int = 3,
                 tau_decay: float = 0.5, v_threshold: float = 1.0):
        super().__init__()
        s1, s2 = _split_patch(patch)
        self.patch = patch
        hidden = max(embed_dim // 2, 1)
        self.conv1 = nn.Conv2d(in_chans, hidden, s1, stride=s1, bias=False)
        self.bn1 = nn.BatchNorm2d(hidden)
        self.conv2 = nn.Conv2d(hidden, embed_dim, s2, stride=s2, bias=False)
        self.bn2 = nn.BatchNorm2d(embed_dim)
        self.lif_template = LIF(tau_decay, v_threshold)
        self.lif_search = LIF(tau_decay, v_threshold)
        # the second stage reads spikes
        self.conv2.spike_input = True

    def pre_lif(self, x: torch.Tensor) -> torch.Tensor:
        return _seq(lambda z: self.bn1(self.conv1(z)), x)

    def _embed(self, x: torch.Tensor, lif: LIF, reset: bool) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % self.patch or w % self.patch:
            raise ValueError(f"input {h}x{w} not divisible by patch size {self.patch}")
        s = lif(self.pre_lif(x), reset=reset)
        y = _seq(lambda z: self.bn2(self.conv2(z)), s)
        return y.flatten(-2)  # (T, B, M, h*w/p^2)

    def forward(self, z_e: torch.Tensor, x_e: torch.Tensor, reset: bool = True) -> torch.Tensor:
        """Event crops (T, B, C, H, W) -> tokens (T, B, M, N_z + N_x)."""
        if 2 * z_e.shape[-1] != x_e.shape[-1] or 2 * z_e.shape[-2] != x_e.shape[-2]:
            raise ValueError("template and search must be in 1:2 size ratio")
        zt = self._embed(z_e, self.lif_template, reset)
        xt = self._embed(x_e, self.lif_search, reset)
        return torch.cat([zt, xt], dim=-1)


class SpikeAttention(nn.Module):
    """Softmax-free product of binary Q, K, V: ``scale * V (K^T Q)`` per head."""

    def __init__(self, heads: int, scale: float):
        super().__init__()
        self.heads = heads
        self.scale = scale

    def forward(self, q, k, v):
        *lead, m, n = q.shape
        d = m // self.heads
        q, k, v = (t.reshape(*lead, self.heads, d, n) for t in (q, k, v))
        attn = k.transpose(-1, -2) @ q  # (.., h, N_key, N_query)
        out = (v @ attn) * self.scale
        return out.reshape(*lead, m, n)


class SpikeMSA(nn.Module):
    """LIF -> ConvBN -> LIF gives Q, K, V; no softmax; ConvBN projection."""

    def __init__(self, dim: int, heads: int = 1, tau_decay: float = 0.5, v_threshold: float = 1.0,
                 check_binary: bool = False):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.lif_in = LIF(tau_decay, v_threshold)
        self.q = ConvBN1d(dim, dim)
        self.k = ConvBN1d(dim, dim)
        self.v = ConvBN1d(dim, dim)
        self.lif_q = LIF(tau_decay, v_threshold)
        self.lif_k = LIF(tau_decay, v_threshold)
        self.lif_v = LIF(tau_decay, v_threshold)
        self.attn = SpikeAttention(heads, 1.0 / math.sqrt(dim))
        self.proj = ConvBN1d(dim, dim)
        self.check_binary = check_binary
        for conv in (self.q.conv, self.k.conv, self.v.conv):
            conv.spike_input = True

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = self.lif_in(x)
        q = self.lif_q(self.q(s))
        k = self.lif_k(self.k(s))
        v = self.lif_v(self.v(s))
        if self.check_binary:
            for name, t in (("Q", q), ("K", k), ("V", v)):
                if not bool(((t == 0) | (t == 1)).all()):
                    raise RuntimeError(f"{name} is not binary")
        return self.proj(self.attn(q, k, v))


class SpikeMLP(nn.Module):
    """Two LIF -> Conv1d -> BN stages over the concatenated token sequence."""

    def __init__(self, dim: int, mlp_ratio: float = 4.0, kernel_size: int = 1,
                 tau_decay: float = 0.5, v_threshold: float = 1.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.lif1 = LIF(tau_decay, v_threshold)
        self.fc1 = ConvBN1d(dim, hidden, kernel_size)
        self.lif2 = LIF(tau_decay, v_threshold)
        self.fc2 = ConvBN1d(hidden, dim, kernel_size)
        self.fc1.conv.spike_input = True
        self.fc2.conv.spike_input = True

    def forward(self, x):
        return self.fc2(self.lif2(self.fc1(self.lif1(x))))


class SpikeBlock(nn.Module):
    """Residual spike-driven encoder block: x + SpikeMSA(x), then + SpikeMLP."""

    def __init__(self, dim: int, heads: int = 1, mlp_ratio: float = 4.0, kernel_size: int = 1,
                 tau_decay: float = 0.5, v_threshold: float = 1.0):
        super().__init__()
        self.msa = SpikeMSA(dim, heads, tau_decay, v_threshold)
        self.mlp = SpikeMLP(dim, mlp_ratio, kernel_size, tau_decay, v_threshold)

    def forward(self, x):
        x1 = x + self.msa(x)
        return x1 + self.mlp(x1)


class SpikingEncoder(nn.Module):
    def __init__(self, embed_dim: int = 64, depth: int = 3, heads: int = 1, mlp_ratio: float = 4.0,
                 patch: int = 16, kernel_size: int = 1, tau_decay: float = 0.5, v_threshold: float = 1.0):
        super().__init__()
        self.tokenizer = SpikingTokenizer(embed_dim, patch, 3, tau_decay, v_threshold)
        self.blocks = nn.ModuleList(SpikeBlock(embed_dim, heads, mlp_ratio, kernel_size, tau_decay, v_threshold)
                                    for _ in range(depth))

    def forward(self, z_e, x_e):
        x = self.tokenizer(z_e, x_e)
        for blk in self.blocks:
            x = blk(x)
        return x


def firing_rate(spikes: torch.Tensor) -> float:
    return float(spikes.float().mean()) if spikes.numel() else 0.0


def zero_block_(block: SpikeBlock) -> None:
    """Make a block the identity by zeroing its output normalisations."""
    for bn in (block.msa.proj.bn, block.mlp.fc2.bn):
        nn.init.zeros_(bn.weight)
        nn.init.zeros_(bn.bias)


__all__ = [
    "LifConfig", "LifState", "LIF", "lif_step", "spike_fn", "surrogate_grad", "surrogate_primitive",
    "SpikingTokenizer", "SpikeAttention", "SpikeMSA", "SpikeMLP", "SpikeBlock", "SpikingEncoder",
    "ConvBN1d", "firing_rate", "zero_block_",
]

"""RGB branch: patch embedding and pre-norm transformer encoder blocks.

Tokens are kept in the column layout ``(B, M, N)`` used by the adapters;
blocks transpose internally where LayerNorm and Linear want channels last.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class VitConfig:
    depth: int = 4
    embed_dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    patch: int = 16

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")


class PatchEmbed(nn.Module):
    """Shared patch projection with separate positional encodings for template and search."""

    def __init__(self, embed_dim: int, patch: int, template_size: int, search_size: int, in_chans: int = 3):
        super().__init__()
        if template_size % patch or search_size % patch:
            raise ValueError("crop sizes must be multiples of the patch size")
        self.patch = patch
        self.template_size = template_size
        self.search_size = search_size
        self.proj = nn.Conv2d(in_chans, embed_dim, patch, stride=patch, bias=False)
        self.pos_z = nn.Parameter(torch.zeros(embed_dim, (template_size // patch) ** 2))
        self.pos_x = nn.Parameter(torch.zeros(embed_dim, (search_size // patch) ** 2))
        nn.init.trunc_normal_(self.pos_z, std=0.02)
        nn.init.trunc_normal_(self.pos_x, std=0.02)

    def forward(self, z: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.template_size or z.shape[-2] != self.template_size:
            raise ValueError(f"template must be {self.template_size}x{self.template_size}")
        if x.shape[-1] != self.search_size or x.shape[-2] != self.search_size:
            raise ValueError(f"search must be {self.search_size}x{self.search_size}")
        zt = self.proj(z).flatten(2) + self.pos_z
        xt = self.proj(x).flatten(2) + self.pos_x
        return torch.cat([zt, xt], dim=-1)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.last_attn: torch.Tensor | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, N, M) channels last."""
        b, n, m = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, m // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)
        self.last_attn = attn.detach()
        out = (attn @ v).transpose(1, 2).reshape(b, n, m)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Pre-norm block; :meth:`msa` and :meth:`mlp` expose the two residual branches."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = Mlp(dim, int(dim * mlp_ratio))

    def msa(self, x: torch.Tensor) -> torch.Tensor:
        return self.attn(self.norm1(x.transpose(-1, -2))).transpose(-1, -2)

    def mlp(self, x: torch.Tensor) -> torch.Tensor:
        return self.ffn(self.norm2(x.transpose(-1, -2))).transpose(-1, -2)

    def forward_stages(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        after_msa = x + self.msa(x)
        after_mlp = after_msa + self.mlp(after_msa)
        return after_msa, after_mlp

    def forward(self, x):
        return self.forward_stages(x)[1]


def zero_block_(block: EncoderBlock) -> None:
    for lin in (block.attn.proj, block.ffn.fc2):
        nn.init.zeros_(lin.weight)
        nn.init.zeros_(lin.bias)


class VisionTransformer(nn.Module):
    def __init__(self, cfg: VitConfig, template_size: int, search_size: int):
        super().__init__()
        self.cfg = cfg
        self.embed = PatchEmbed(cfg.embed_dim, cfg.patch, template_size, search_size)
        self.blocks = nn.ModuleList(EncoderBlock(cfg.embed_dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.apply(_init_weights)

    def final_norm(self, x):
        return self.norm(x.transpose(-1, -2)).transpose(-1, -2)

    def forward(self, z, x):
        t = self.embed(z, x)
        for blk in self.blocks:
            t = blk(t)
        return self.final_norm(t)


def _init_weights(m):
    if isinstance(m, nn.Linear):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)

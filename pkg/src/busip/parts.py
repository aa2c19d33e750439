"""Unsupervised scattering-part discovery.

``K + 1`` learnable prototypes (index 0 is background) are concatenated with
the patch tokens and run through a plain pre-norm transformer encoder. The
outputs at the prototype positions are the part tokens; the part probability
map ``V`` assigns every patch a distribution over the ``K + 1`` parts.
"""
import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class PartOutput:
    part_tokens: torch.Tensor  # (B, K+1, C), index 0 background
    V: torch.Tensor  # (B, H', W', K+1)
    patch_embed: torch.Tensor  # (B, N, C), final-block patch embeddings


def sincos_2d(height, width, dim, dtype=torch.float32):
    """Fixed 2-D sine/cosine position table of shape ``(height * width, dim)``.

    Half of the channels encode the row, half the column.
    """
    if dim % 4:
        raise ValueError(f"embedding width must be divisible by 4, got {dim}")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter)
    ys, xs = torch.meshgrid(torch.arange(height, dtype=torch.float64),
                            torch.arange(width, dtype=torch.float64), indexing="ij")
    ang_y = ys.reshape(-1, 1) * omega
    ang_x = xs.reshape(-1, 1) * omega
    pe = torch.cat([ang_y.sin(), ang_y.cos(), ang_x.sin(), ang_x.cos()], dim=1)
    return pe.to(dtype)


def patchify(features):
    """``(B, C, H', W')`` feature map to row-major ``(B, N, C)`` tokens plus ``(N, C)`` positions."""
    B, C, H, W = features.shape
    tokens = features.flatten(2).transpose(1, 2)
    return tokens, sincos_2d(H, W, C, dtype=features.dtype).to(features.device)


class Attention(nn.Module):
    """Multi-head attention that also returns the attention weights."""

    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, query, context):
        B, Nq, C = query.shape
        Nk = context.shape[1]
        h, d = self.heads, C // self.heads
        q = self.q(query).view(B, Nq, h, d).transpose(1, 2)
        k = self.k(context).view(B, Nk, h, d).transpose(1, 2)
        v = self.v(context).view(B, Nk, h, d).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, Nq, C)
        return self.out(out), attn


class Mlp(nn.Sequential):
    def __init__(self, dim, ratio):
        super().__init__(nn.Linear(dim, int(dim * ratio)), nn.GELU(), nn.Linear(int(dim * ratio), dim))


class EncoderBlock(nn.Module):
    def __init__(self, dim, heads, mlp_ratio=2.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h)[0]
        return x + self.mlp(self.norm2(x))


def part_probability_map(patch_embed, part_tokens, tau=1.0):
    """Softmax over parts of scaled dot products, shape ``(B, N, K+1)``."""
    C = patch_embed.shape[-1]
    logits = patch_embed @ part_tokens.transpose(-2, -1) / (tau * math.sqrt(C))
    return torch.softmax(logits, dim=-1)


def masked_part_pool(V, patches, eps=1e-6):
    """Probability-weighted mean patch token per part.

    ``V`` is ``(B, H', W', K+1)`` (or ``(B, N, K+1)``), ``patches`` is
    ``(B, N, C)``; returns ``(B, K+1, C)``. Parts with no mass come out near
    zero rather than undefined.
    """
    V = V.flatten(1, -2) if V.dim() == 4 else V
    mass = V.sum(dim=1)  # (B, K+1)
    return (V.transpose(1, 2) @ patches) / (mass[..., None] + eps)


class ScatteringPartTransformer(nn.Module):
    def __init__(self, num_parts=5, dim=128, depth=4, heads=4, mlp_ratio=2.0, tau=1.0):
        super().__init__()
        self.num_parts = num_parts
        self.tau = tau
        self.prototypes = nn.Parameter(torch.randn(num_parts + 1, dim) * 0.02)
        self.blocks = nn.ModuleList(EncoderBlock(dim, heads, mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def encode(self, prototypes, patches):
        """Run the encoder on ``[prototypes; patches]``; prototypes get no position term."""
        B = patches.shape[0]
        if prototypes.dim() == 2:
            prototypes = prototypes.expand(B, -1, -1)
        x = torch.cat([prototypes, patches], dim=1)
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x)
        n = prototypes.shape[1]
        return x[:, :n], x[:, n:]

    def forward(self, features, prototypes=None):
        """``features`` is the ``(B, C, H', W')`` token grid from the front-end."""
        B, C, H, W = features.shape
        tokens, pos = patchify(features)
        parts, patch_embed = self.encode(self.prototypes if prototypes is None else prototypes,
                                         tokens + pos)
        V = part_probability_map(patch_embed, parts, self.tau)
        return PartOutput(part_tokens=parts, V=V.view(B, H, W, -1), patch_embed=patch_embed)

"""Cross-attention aggregation of part tokens into a class feature."""
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .parts import Attention, Mlp


@dataclass
class Prediction:
    logits: torch.Tensor  # (B, num_classes)
    label: torch.Tensor  # (B,)
    part_scores: torch.Tensor  # (B, K), rows on the simplex


class CrossAttentionBlock(nn.Module):
    """The class token queries the part tokens; parts are keys and values.

    Part tokens already leave the part transformer layer-normalized, so only
    the query side is normalized here.
    """

    def __init__(self, dim, heads, mlp_ratio=2.0):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, cls, parts):
        out, attn = self.attn(self.norm_q(cls), parts)
        cls = cls + out
        cls = cls + self.mlp(self.norm2(cls))
        return cls, attn


class PartKnowledgeAggregation(nn.Module):
    def __init__(self, dim=128, heads=4, depth=1, mlp_ratio=2.0):
        super().__init__()
        self.class_token = nn.Parameter(torch.randn(dim) * 0.02)
        self.blocks = nn.ModuleList(CrossAttentionBlock(dim, heads, mlp_ratio) for _ in range(depth))

    def forward(self, part_tokens, class_token=None):
        """``part_tokens`` are the ``(B, K, C)`` foreground parts.

        Returns ``f_cls`` of shape ``(B, C)`` and the head-averaged attention
        of the last block, ``(B, K)``.
        """
        if part_tokens.shape[1] < 1:
            raise ValueError("need at least one part token")
        B = part_tokens.shape[0]
        c = self.class_token if class_token is None else class_token
        cls = c.expand(B, 1, -1)
        attn = None
        for blk in self.blocks:
            cls, attn = blk(cls, part_tokens)
        return cls[:, 0], attn.mean(dim=1)[:, 0]


def cls_loss(logits, target):
    """Mean cross-entropy; labels outside ``[0, num_classes)`` raise ``ValueError``."""
    target = torch.as_tensor(target, device=logits.device)
    n = logits.shape[-1]
    if target.numel() and (int(target.min()) < 0 or int(target.max()) >= n):
        raise ValueError(f"class label out of range [0, {n}): {target.tolist()}")
    return F.cross_entropy(logits, target.long())


def predict(logits, part_scores):
    return Prediction(logits=logits, label=logits.argmax(dim=-1), part_scores=part_scores)

"""The assembled recognition network and its ablated variants."""
import math
from dataclasses import dataclass

import torch
from torch import nn

from .aggregation import PartKnowledgeAggregation
from .losses import GlobalDescriptionConsistency
from .morlet import MorletFilterBank
from .parts import ScatteringPartTransformer
from .scattering import LocalScatteringPerceptron


@dataclass
class ModelOutput:
    logits: torch.Tensor
    features: torch.Tensor  # (B, C, H', W') front-end token grid
    part_tokens: torch.Tensor | None = None  # (B, K+1, C)
    V: torch.Tensor | None = None  # (B, H', W', K+1)
    part_scores: torch.Tensor | None = None  # (B, K)


class InputConditioning(nn.Module):
    """Fixed per-chip conditioning: circular Gaussian prefilter, then unit RMS.

    Training views are bilinear resamplings of the chips, which low-pass the
    pixel-level speckle; raw evaluation chips are not resampled. The prefilter
    removes the band that resampling alters and the RMS step removes the
    residual energy change, so both kinds of input share statistics.
    """

    def __init__(self, prefilter_sigma=0.7, norm="rms", eps=1e-6):
        super().__init__()
        self.prefilter_sigma = prefilter_sigma
        self.norm = norm
        self.eps = eps

    def forward(self, images):
        x = images
        if self.prefilter_sigma > 0:
            H, W = x.shape[-2:]
            fy = torch.fft.fftfreq(H, dtype=x.dtype, device=x.device)[:, None]
            fx = torch.fft.fftfreq(W, dtype=x.dtype, device=x.device)[None, :]
            transfer = torch.exp(-2 * math.pi**2 * self.prefilter_sigma**2 * (fx**2 + fy**2))
            x = torch.fft.ifft2(torch.fft.fft2(x) * transfer).real
        if self.norm == "rms":
            x = x / (x.square().mean(dim=(-2, -1), keepdim=True).sqrt() + self.eps)
        return x

    def extra_repr(self):
        return f"prefilter_sigma={self.prefilter_sigma}, norm={self.norm}"


class ConvStem(nn.Module):
    """Plain strided CNN front-end used when the scattering perceptron is ablated."""

    def __init__(self, embed_dim=128, stride=8):
        super().__init__()
        n = int(round(math.log2(stride)))
        if 2**n != stride:
            raise ValueError(f"stride must be a power of two, got {stride}")
        chans = [1] + [min(embed_dim, 32 * 2**i) for i in range(n - 1)] + [embed_dim]
        layers = []
        for i in range(n):
            layers.append(nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1))
            if i < n - 1:
                layers += [nn.BatchNorm2d(chans[i + 1]), nn.ReLU()]
        self.net = nn.Sequential(*layers)

    def forward(self, images):
        if images.dim() == 3:
            images = images.unsqueeze(1)
        return self.net(images)


class BUSIPNet(nn.Module):
    """Front-end -> part transformer -> part aggregation -> linear classifier.

    With ``use_spr`` off the token grid is globally averaged into the head;
    with ``use_pki`` off the foreground part tokens are averaged instead.
    """

    def __init__(self, num_classes, cfg):
        super().__init__()
        self.num_classes = num_classes
        self.use_lsp, self.use_spr, self.use_pki = cfg.use_lsp, cfg.use_spr, cfg.use_pki
        C = cfg.embed_dim
        self.condition = InputConditioning(cfg.prefilter_sigma, cfg.input_norm)
        if cfg.use_lsp:
            bank = MorletFilterBank(J=cfg.J, L=cfg.L, grid_size=cfg.grid_size)
            self.backbone = LocalScatteringPerceptron(order=cfg.order, embed_dim=C,
                                                      stride=cfg.patch_stride, bank=bank)
        else:
            self.backbone = ConvStem(C, cfg.patch_stride)
        if cfg.use_spr:
            self.spt = ScatteringPartTransformer(cfg.num_parts, C, cfg.depth, cfg.heads,
                                                 cfg.mlp_ratio, cfg.tau)
            self.anchors = nn.Parameter(torch.randn(cfg.num_parts, C))
            self.gdc = GlobalDescriptionConsistency(C, eps=cfg.loss.epsilon)
        if cfg.use_pki:
            self.pki = PartKnowledgeAggregation(C, cfg.heads, cfg.pki_depth, cfg.mlp_ratio)
        self.head = nn.Linear(C, num_classes)

    def forward(self, images):
        if images.dim() == 4:
            images = images.squeeze(1)
        feats = self.backbone(self.condition(images))
        if not self.use_spr:
            return ModelOutput(logits=self.head(feats.mean(dim=(2, 3))), features=feats)
        parts = self.spt(feats)
        fg = parts.part_tokens[:, 1:]
        if self.use_pki:
            f_cls, scores = self.pki(fg)
        else:
            f_cls, scores = fg.mean(dim=1), None
        return ModelOutput(logits=self.head(f_cls), features=feats, part_tokens=parts.part_tokens,
                           V=parts.V, part_scores=scores)

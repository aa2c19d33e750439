"""Part-learning losses and the weighted training objective.

Part probability maps ``V`` are ``(B, H', W', K+1)`` with channel 0 the
background. Token coordinates are integers: ``x`` is the column index and
``y`` the row index.
"""
import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .errors import NonFiniteLossError
from .geometry import warp_map

COMPONENTS = ("cls", "ipc", "mpb", "gdc", "pso")


@dataclass
class LossWeights:
    lambda_pso: float = 0.1
    lambda_ipc: float = 1.0
    lambda_mpd: float = 1.0
    alpha: float | None = None  # None means 5% of the token count
    epsilon: float = 1e-6
    margin: float = 0.5
    scale: float = 16.0

    def __post_init__(self):
        for name in ("lambda_pso", "lambda_ipc", "lambda_mpd", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.epsilon <= 0 or self.scale <= 0:
            raise ValueError("epsilon and scale must be positive")

    def alpha_for(self, num_tokens):
        return self.alpha if self.alpha is not None else 0.05 * num_tokens

    def to_dict(self):
        return asdict(self)


def _batched(V):
    return V.unsqueeze(0) if V.dim() == 3 else V


def part_mass(V, eps=1e-6):
    """``z_k = sum_loc V^k + eps`` for every channel, shape ``(B, K+1)``."""
    return _batched(V).sum(dim=(1, 2)) + eps


def ipc_loss(V, eps=1e-6):
    """Spatial compactness: mean over foreground parts of ``var_x + var_y``."""
    V = _batched(V)
    B, H, W, _ = V.shape
    fg = V[..., 1:]
    w = fg / (fg.sum(dim=(1, 2), keepdim=True) + eps)
    ys = torch.arange(H, dtype=V.dtype, device=V.device).view(1, H, 1, 1)
    xs = torch.arange(W, dtype=V.dtype, device=V.device).view(1, 1, W, 1)
    mx = (w * xs).sum(dim=(1, 2), keepdim=True)
    my = (w * ys).sum(dim=(1, 2), keepdim=True)
    var = (w * ((xs - mx) ** 2 + (ys - my) ** 2)).sum(dim=(1, 2))  # (B, K)
    return var.mean()


def mpb_from_mass(z, alpha):
    """``sum_k 1 / (1 + z_k / alpha)`` over the last axis, averaged over the batch."""
    z = torch.as_tensor(z)
    return (1.0 / (1.0 + z / alpha)).sum(dim=-1).mean()


def mpb_loss(V, alpha, eps=1e-6):
    """Minimum-area penalty over all ``K+1`` regions, background included."""
    return mpb_from_mass(part_mass(V, eps), alpha)


def pso_loss(G, W, margin=0.5, scale=16.0):
    """Additive angular margin loss pulling part ``k`` toward anchor ``k``.

    ``G`` holds part tokens ``(K, C)`` or ``(B, K, C)``; ``W`` the ``(K, C)``
    anchors. Only angles matter, so any row may be rescaled freely.
    """
    G = G.unsqueeze(0) if G.dim() == 2 else G
    if (G.norm(dim=-1) == 0).any() or (W.norm(dim=-1) == 0).any():
        raise ValueError("zero-norm row in part tokens or anchors")
    K = W.shape[0]
    cos = F.normalize(G, dim=-1) @ F.normalize(W, dim=-1).T  # cos[b, k, t] = cos theta(t, k)
    diag = torch.diagonal(cos, dim1=1, dim2=2)
    theta = torch.acos(diag.clamp(-1 + 1e-7, 1 - 1e-7))
    target = torch.cos((theta + margin).clamp(0.0, math.pi))
    eye = torch.eye(K, dtype=torch.bool, device=G.device)
    logits = scale * torch.where(eye, torch.diag_embed(target), cos)
    labels = torch.arange(K, device=G.device).expand(G.shape[0], K)
    return F.cross_entropy(logits.reshape(-1, K), labels.reshape(-1))


def cosine_distance(a, b, eps=1e-6, dim=-1):
    """``1 - a.b / (|a||b|)`` with the denominator clamped at ``eps``."""
    num = (a * b).sum(dim=dim)
    den = (a.norm(dim=dim) * b.norm(dim=dim)).clamp_min(eps)
    return 1.0 - num / den


def masked_cosine_distance(target, recon, mask=None, eps=1e-6):
    """Mean cosine distance over valid locations; inputs ``(B, H, W, C)``, mask ``(B, H, W)``."""
    d = cosine_distance(target, recon, eps)
    if mask is None:
        return d.mean()
    per_item = (d * mask).sum(dim=(1, 2)) / (mask.sum(dim=(1, 2)) + eps)
    return per_item.mean()


def gdc_from_features(target1, recon1, target2, recon2, mask1=None, mask2=None, eps=1e-6):
    """Sum of the two view-wise cosine distances."""
    return (masked_cosine_distance(target1, recon1, mask1, eps)
            + masked_cosine_distance(target2, recon2, mask2, eps))


def compose_parts(V, part_tokens):
    """``F(loc) = sum_k V^k(loc) p_k``: ``(B, H, W, K+1) x (B, K+1, C) -> (B, H, W, C)``."""
    return torch.einsum("bhwk,bkc->bhwc", V, part_tokens)


class RandomFeatureExtractor(nn.Module):
    """Frozen random strided CNN used as the perceptual feature space."""

    def __init__(self, width=64, seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        chans = [1, width // 4, width // 2, width, width]
        strides = [2, 2, 2, 1]
        layers = []
        for i, s in enumerate(strides):
            conv = nn.Conv2d(chans[i], chans[i + 1], 3, stride=s, padding=1)
            fan_in = chans[i] * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in))
                conv.bias.zero_()
            layers += [conv, nn.ReLU()]
        self.net = nn.Sequential(*layers[:-1])
        self.out_channels = width
        self.requires_grad_(False)

    def forward(self, images):
        if images.dim() == 3:
            images = images.unsqueeze(1)
        return self.net(images)


class GlobalDescriptionConsistency(nn.Module):
    """Cross-view feature reconstruction from part maps and part tokens.

    View 1 is rebuilt from view 2's parts warped into view 1's frame and vice
    versa; the rebuilt token features are decoded linearly into the feature
    extractor's space and compared with the extractor's response to the real
    view, both on the token grid.
    """

    def __init__(self, dim=128, feature_width=64, eps=1e-6):
        super().__init__()
        self.phi = RandomFeatureExtractor(feature_width)
        self.decoder = nn.Linear(dim, feature_width)
        self.eps = eps

    def target(self, images, grid_hw):
        f = F.adaptive_avg_pool2d(self.phi(images), grid_hw)
        return f.permute(0, 2, 3, 1)

    def reconstruct(self, V_src, parts_src, forward):
        warped, mask = warp_map(V_src, forward)
        return self.decoder(compose_parts(warped, parts_src)), mask

    def forward(self, img1, img2, V1, V2, parts1, parts2, warp1to2, warp2to1):
        grid_hw = V1.shape[1:3]
        recon1, mask1 = self.reconstruct(V2, parts2, warp2to1)
        recon2, mask2 = self.reconstruct(V1, parts1, warp1to2)
        return gdc_from_features(self.target(img1, grid_hw), recon1,
                                 self.target(img2, grid_hw), recon2, mask1, mask2, self.eps)


def total_loss(components, weights, switches=None, step=None):
    """Weighted objective; ``components`` maps names in ``COMPONENTS`` to scalars.

    Missing or switched-off components contribute nothing. Raises
    ``NonFiniteLossError`` naming the first non-finite component.
    """
    switches = switches or {}
    coef = {"cls": 1.0, "gdc": 1.0, "pso": weights.lambda_pso, "ipc": weights.lambda_ipc,
            "mpb": weights.lambda_mpd}
    total = None
    for name in COMPONENTS:
        value = components.get(name)
        if value is None or not switches.get(name, True):
            continue
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise NonFiniteLossError(name, step, float(value))
        term = coef[name] * value
        total = term if total is None else total + term
    if total is None:
        total = torch.zeros(())
    return total

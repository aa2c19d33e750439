"""Affine maps on normalized image coordinates.

Maps are ``(..., 2, 3)`` tensors acting on ``(x, y)`` in ``[-1, 1]`` with
pixel centers at ``(2i + 1) / n - 1`` (x along columns, y along rows). Being
resolution independent, the same map applies to an image and to its token
grid.
"""
import torch
from torch.nn import functional as F


def invert_affine(A):
    """Inverse of ``(..., 2, 3)`` affine maps."""
    M, t = A[..., :2], A[..., 2:]
    Minv = torch.linalg.inv(M)
    return torch.cat([Minv, -Minv @ t], dim=-1)


def compose_affine(A, B):
    """``A o B`` for ``(..., 2, 3)`` maps (apply ``B`` first)."""
    M = A[..., :2] @ B[..., :2]
    t = A[..., :2] @ B[..., 2:] + A[..., 2:]
    return torch.cat([M, t], dim=-1)


def warp_map(V, forward):
    """Resample ``(B, H, W, C)`` maps through ``forward`` (source -> destination).

    Affines act on normalized ``[-1, 1]`` coordinates with pixel centers at
    ``(2i + 1) / n - 1``. Returns the warped maps and a ``(B, H, W)`` mask of
    destination locations that fall fully inside the source.
    """
    B, H, W, C = V.shape
    sample = invert_affine(forward).to(V.dtype)
    grid = F.affine_grid(sample, (B, C, H, W), align_corners=False)
    warped = F.grid_sample(V.permute(0, 3, 1, 2), grid, mode="bilinear", padding_mode="zeros",
                           align_corners=False)
    ones = torch.ones(B, 1, H, W, dtype=V.dtype, device=V.device)
    cover = F.grid_sample(ones, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return warped.permute(0, 2, 3, 1), (cover[:, 0] > 1 - 1e-3).to(V.dtype)

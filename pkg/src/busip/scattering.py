"""Non-downsampled scattering transform and the local scattering perceptron.

All convolutions are circular and computed with 2-D FFTs, so the transform
commutes exactly with circular shifts of the input. Channels are laid out
order 0 first, then order 1 in flat ``(j, l)`` order, then order 2 grouped by
``(j1, l1)`` and then ``(j2, l2)`` with ``j2 > j1``.
"""
from dataclasses import dataclass
from math import comb

import torch
from torch import nn

from .errors import ConfigurationError
from .morlet import MorletFilterBank


@dataclass
class ScatteringFeatureMap:
    values: torch.Tensor  # (..., Cs, H, W)
    path_index: list

    @property
    def num_channels(self):
        return self.values.shape[-3]


def num_channels(J, L, order=2):
    n = 1 + J * L
    if order >= 2:
        n += comb(J, 2) * L * L
    return n


def scattering_paths(J, L, order=2):
    """Path descriptor per channel: ``()``, ``((j, l),)`` or ``((j1, l1), (j2, l2))``."""
    if order not in (1, 2):
        raise ConfigurationError(f"scattering order must be 1 or 2, got {order}")
    paths = [()]
    paths += [((j, l),) for j in range(J) for l in range(L)]
    if order == 2:
        paths += [((j1, l1), (j2, l2))
                  for j1 in range(J) for l1 in range(L)
                  for j2 in range(j1 + 1, J) for l2 in range(L)]
    return paths


def embed_kernel(kernel, height, width):
    """Zero-pad ``(..., S, S)`` kernels to ``(..., H, W)`` with the center at index 0."""
    S = kernel.shape[-1]
    if S > height or S > width:
        raise ConfigurationError(f"kernel of size {S} does not fit a {height}x{width} image")
    pad = torch.zeros(*kernel.shape[:-2], height, width, dtype=kernel.dtype, device=kernel.device)
    pad[..., :S, :S] = kernel
    return torch.roll(pad, shifts=(-(S // 2), -(S // 2)), dims=(-2, -1))


def kernel_hat(kernel, height, width):
    return torch.fft.fft2(embed_kernel(kernel, height, width))


def conv2d_circular(image, kernel):
    """Circular convolution of ``(..., H, W)`` images with an ``(S, S)`` kernel.

    A batch of kernels ``(F, S, S)`` broadcasts against the image's leading
    dimensions like any other tensor. The result is always complex.
    """
    H, W = image.shape[-2:]
    return torch.fft.ifft2(torch.fft.fft2(image) * kernel_hat(kernel, H, W))


def _modulus(z):
    # torch's complex abs already has a zero subgradient at 0
    return z.abs()


def _check_image(image):
    if not torch.isfinite(image).all():
        raise ValueError("image contains non-finite values")


def _modulus_cascade(image, bank, order, smooth):
    """Shared wavelet-modulus cascade; ``smooth`` maps real ``(..., C, H, W)`` maps to outputs."""
    _check_image(image)
    H, W = image.shape[-2:]
    J, L = bank.J, bank.L
    dtype = image.dtype
    psi = bank.wavelets()
    psi = psi.to(torch.complex128 if dtype == torch.float64 else torch.complex64)
    psi_hat = kernel_hat(psi, H, W)  # (J*L, H, W)

    x_hat = torch.fft.fft2(image)
    u1 = _modulus(torch.fft.ifft2(x_hat.unsqueeze(-3) * psi_hat))  # (..., J*L, H, W)
    u1_hat = torch.fft.fft2(u1)
    out = [smooth(image.unsqueeze(-3)), smooth(u1)]
    if order == 2:
        for j1 in range(J - 1):
            a = u1_hat[..., j1 * L:(j1 + 1) * L, :, :]  # (..., L, H, W)
            b = psi_hat[(j1 + 1) * L:]  # ((J-j1-1)*L, H, W)
            u2 = _modulus(torch.fft.ifft2(a.unsqueeze(-3) * b))
            u2 = u2.flatten(-4, -3)
            out.append(smooth(u2))
    return torch.cat(out, dim=-3)


def scatter(image, bank, order=2):
    """Full-resolution scattering coefficients of real ``(..., H, W)`` images."""
    if order not in (1, 2):
        raise ConfigurationError(f"scattering order must be 1 or 2, got {order}")
    H, W = image.shape[-2:]
    phi = bank.lowpass().to(image.dtype)
    phi_hat = kernel_hat(phi, H, W)

    def smooth(u):
        return torch.fft.ifft2(torch.fft.fft2(u) * phi_hat).real

    values = _modulus_cascade(image, bank, order, smooth)
    return ScatteringFeatureMap(values=values, path_index=scattering_paths(bank.J, bank.L, order))


def pooling_matrix(sigma, grid_size, length, stride, dtype=torch.float64):
    """Rows ``m`` give the 1-D weights of low-pass then box average at ``m * stride``.

    The Gaussian low-pass is separable, so circular smoothing followed by
    ``stride x stride`` average pooling of an ``(H, W)`` map equals
    ``A_H @ U @ A_W.T`` with ``A = pooling_matrix(...)``.
    """
    if length % stride:
        raise ConfigurationError(f"size {length} is not divisible by stride {stride}")
    if grid_size > length:
        raise ConfigurationError(f"kernel of size {grid_size} does not fit length {length}")
    t = torch.arange(grid_size, dtype=torch.float64) - grid_size // 2
    g = torch.exp(-t**2 / (2 * sigma**2))
    g = g / g.sum()
    line = torch.zeros(length, dtype=torch.float64)
    line[t.long() % length] = g
    # window[d] = mean_a g[d + a]; out[m] = sum_i window[(m*stride - i) mod n] * u[i]
    window = sum(torch.roll(line, -a) for a in range(stride)) / stride
    rows = torch.arange(0, length, stride)
    cols = torch.arange(length)
    A = window[(rows[:, None] - cols[None, :]) % length]
    return A.to(dtype)


def scatter_pooled(image, bank, order=2, stride=8):
    """Scattering followed by non-overlapping ``stride`` average pooling.

    Equal to ``avg_pool2d(scatter(image).values, stride)``; the final
    low-pass and the pooling are folded into two small matrix products so the
    full-resolution smoothing is never materialized.
    """
    if order not in (1, 2):
        raise ConfigurationError(f"scattering order must be 1 or 2, got {order}")
    H, W = image.shape[-2:]
    if H % stride or W % stride:
        raise ConfigurationError(f"image size {H}x{W} is not divisible by stride {stride}")
    A_h = pooling_matrix(bank.lowpass_sigma, bank.grid_size, H, stride, image.dtype)
    A_w = pooling_matrix(bank.lowpass_sigma, bank.grid_size, W, stride, image.dtype)
    return _modulus_cascade(image, bank, order, lambda u: A_h @ u @ A_w.T)


class LocalScatteringPerceptron(nn.Module):
    """Learnable scattering front-end producing a token grid.

    ``(B, H, W)`` images become ``(B, C, H/P, W/P)`` features: scattering with
    a learnable Morlet bank, ``P x P`` average pooling, per-channel
    standardization with running statistics and a learned 1x1 projection.
    """

    def __init__(self, J=3, L=4, order=2, embed_dim=128, stride=8, grid_size=None, bank=None):
        super().__init__()
        self.bank = bank if bank is not None else MorletFilterBank(J=J, L=L, grid_size=grid_size)
        self.order = order
        self.stride = stride
        self.in_channels = num_channels(self.bank.J, self.bank.L, order)
        # cumulative running statistics: scattering variances are ~1e-3, so the
        # default exponential average stays biased by its unit init for hundreds of steps
        self.norm = nn.BatchNorm2d(self.in_channels, affine=False, momentum=None)
        self.proj = nn.Conv2d(self.in_channels, embed_dim, kernel_size=1)

    def forward(self, images):
        if images.dim() == 4:
            images = images.squeeze(1)
        H, W = images.shape[-2:]
        if H % self.stride or W % self.stride:
            raise ConfigurationError(f"image size {H}x{W} is not divisible by stride {self.stride}")
        s = scatter_pooled(images, self.bank, self.order, self.stride)
        return self.proj(self.norm(s))

"""Parametric 2-D Morlet wavelets and learnable filter banks.

A wavelet is defined on an odd ``S x S`` grid with unit pixel spacing and the
origin at the central sample. Coordinates are ``u = (u1, u2)`` where ``u1``
runs along columns (x) and ``u2`` along rows (y)::

    psi(u) = exp(-|D_gamma R_theta u|^2 / (2 sigma^2)) * (exp(i xi u') - beta)
    u'     = u1 cos(theta) + u2 sin(theta)

``R_theta u`` expresses ``u`` in the frame aligned with the carrier direction
and ``D_gamma = diag(1, gamma)`` squeezes the envelope across it. ``beta`` is
recomputed from the current parameters on every evaluation so the discrete
kernel sums to zero whatever the parameter values are.
"""
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigurationError, ParameterDomainError
from .tensorio import write_dump

DEFAULT_BASE_SIGMA = 0.8
DEFAULT_BASE_XI = 3 * math.pi / 4
MANIFEST_FORMAT = "busip.filterbank/1"


class GridSizeWarning(UserWarning):
    """Kernel grid too small to hold the coarsest envelope."""


@dataclass(frozen=True)
class MorletParams:
    sigma: float
    theta: float
    xi: float
    gamma: float

    def __post_init__(self):
        for name in ("sigma", "theta", "xi", "gamma"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterDomainError(f"{name} must be finite, got {getattr(self, name)}")
        if self.sigma <= 0:
            raise ParameterDomainError(f"sigma must be > 0, got {self.sigma}")
        if self.gamma <= 0:
            raise ParameterDomainError(f"gamma must be > 0, got {self.gamma}")
        if self.xi < 0:
            raise ParameterDomainError(f"xi must be >= 0, got {self.xi}")


@dataclass
class ComplexKernel:
    values: torch.Tensor  # complex, (S, S)
    beta: float


def _check_grid(size):
    if size < 1 or size % 2 == 0:
        raise ConfigurationError(f"grid size must be a positive odd integer, got {size}")


def kernel_grid(size, dtype=torch.float64, device=None):
    """Centered integer coordinates ``(u1, u2)``, each of shape ``(S, S)``."""
    _check_grid(size)
    r = torch.arange(size, dtype=dtype, device=device) - (size // 2)
    u2, u1 = torch.meshgrid(r, r, indexing="ij")
    return u1, u2


def morlet(sigma, theta, xi, gamma, size):
    """Differentiable Morlet kernels from parameter tensors.

    All four arguments are broadcastable tensors of shape ``(F,)`` (or scalars).
    Returns ``(values, beta)`` with ``values`` complex of shape ``(F, S, S)``
    and ``beta`` real of shape ``(F,)``.
    """
    sigma, theta, xi, gamma = torch.broadcast_tensors(
        *(torch.as_tensor(t) for t in (sigma, theta, xi, gamma))
    )
    sigma, theta, xi, gamma = (t.reshape(-1, 1, 1) for t in (sigma, theta, xi, gamma))
    u1, u2 = kernel_grid(size, dtype=sigma.dtype, device=sigma.device)
    c, s = torch.cos(theta), torch.sin(theta)
    along = u1 * c + u2 * s
    across = -u1 * s + u2 * c
    envelope = torch.exp(-(along**2 + (gamma * across) ** 2) / (2 * sigma**2))
    phase = xi * along
    beta = (envelope * torch.cos(phase)).sum(dim=(-2, -1)) / envelope.sum(dim=(-2, -1))
    real = envelope * (torch.cos(phase) - beta[:, None, None])
    imag = envelope * torch.sin(phase)
    return torch.complex(real, imag), beta


def _as_tensors(params, dtype):
    return [torch.tensor(getattr(params, n), dtype=dtype) for n in ("sigma", "theta", "xi", "gamma")]


def normalization_beta(params, grid_size):
    """Real constant that makes the kernel's real part sum to zero on the grid.

    >>> round(normalization_beta(MorletParams(1.0, 0.0, 0.0, 1.0), 33), 12)
    1.0
    """
    if not isinstance(params, MorletParams):
        params = MorletParams(*params)
    _, beta = morlet(*_as_tensors(params, torch.float64), grid_size)
    return float(beta[0])


def make_morlet(params, grid_size, dtype=torch.float64):
    if not isinstance(params, MorletParams):
        params = MorletParams(*params)
    values, beta = morlet(*_as_tensors(params, dtype), grid_size)
    return ComplexKernel(values=values[0], beta=float(beta[0]))


def gaussian_lowpass(sigma, size, dtype=torch.float64):
    """Isotropic Gaussian on the kernel grid, normalized to unit sum."""
    u1, u2 = kernel_grid(size, dtype=dtype)
    g = torch.exp(-(u1**2 + u2**2) / (2 * sigma**2))
    return g / g.sum()


def default_grid_size(J, base_sigma=DEFAULT_BASE_SIGMA):
    return 2 * math.ceil(4 * base_sigma * 2 ** (J - 1)) + 1


def _softplus_inv(x):
    x = torch.as_tensor(x, dtype=torch.float64)
    return x + torch.log(-torch.expm1(-x))


class MorletFilterBank(nn.Module):
    """``J x L`` learnable Morlet wavelets plus a fixed Gaussian low-pass.

    Wavelet ``(j, l)`` sits at flat index ``j * L + l`` and is initialized with
    ``sigma = base_sigma * 2**j``, ``xi = base_xi / 2**j``, ``theta = pi * l / L``.
    ``sigma``, ``gamma`` and ``xi`` are stored as softplus pre-activations so
    that gradient steps never leave the valid domain.
    """

    def __init__(self, J=3, L=4, base_sigma=DEFAULT_BASE_SIGMA, base_xi=DEFAULT_BASE_XI,
                 gamma=1.0, grid_size=None):
        super().__init__()
        if J < 1 or L < 1:
            raise ConfigurationError(f"need J >= 1 and L >= 1, got J={J}, L={L}")
        if base_sigma <= 0 or gamma <= 0 or base_xi <= 0:
            raise ParameterDomainError("base_sigma, base_xi and gamma must be positive")
        self.J, self.L = J, L
        self.base_sigma, self.base_xi, self.base_gamma = base_sigma, base_xi, gamma
        self.grid_size = grid_size or default_grid_size(J, base_sigma)
        _check_grid(self.grid_size)
        self.lowpass_sigma = base_sigma * 2 ** (J - 1)

        self.warnings = []
        if self.grid_size < 4 * self.lowpass_sigma:
            msg = (f"grid size {self.grid_size} < 4 * sigma of the coarsest filter "
                   f"({self.lowpass_sigma:g}); kernels will be truncated")
            self.warnings.append(msg)
            warnings.warn(msg, GridSizeWarning, stacklevel=2)

        j = torch.arange(J, dtype=torch.float64).repeat_interleave(L)
        l = torch.arange(L, dtype=torch.float64).repeat(J)
        self.raw_sigma = nn.Parameter(_softplus_inv(base_sigma * 2**j).float())
        self.theta = nn.Parameter((math.pi * l / L).float())
        self.raw_xi = nn.Parameter(_softplus_inv(base_xi / 2**j).float())
        self.raw_gamma = nn.Parameter(_softplus_inv(torch.full((J * L,), float(gamma))).float())

    @property
    def sigma(self):
        return F.softplus(self.raw_sigma)

    @property
    def xi(self):
        return F.softplus(self.raw_xi)

    @property
    def gamma(self):
        return F.softplus(self.raw_gamma)

    def __len__(self):
        return self.J * self.L

    def index(self, j, l):
        return j * self.L + l

    def wavelets(self):
        """Complex kernels, shape ``(J*L, S, S)``."""
        values, _ = morlet(self.sigma, self.theta, self.xi, self.gamma, self.grid_size)
        return values

    def lowpass(self):
        """Fixed Gaussian low-pass in the dtype of the learnable parameters."""
        return gaussian_lowpass(self.lowpass_sigma, self.grid_size, dtype=self.theta.dtype)

    def params(self):
        with torch.no_grad():
            cols = [t.double().tolist() for t in (self.sigma, self.theta, self.xi, self.gamma)]
        return [MorletParams(*p) for p in zip(*cols)]

    @torch.no_grad()
    def set_params(self, params):
        params = list(params)
        if len(params) != len(self):
            raise ConfigurationError(f"expected {len(self)} parameter sets, got {len(params)}")
        sig, th, xi, gam = (torch.tensor(c, dtype=torch.float64) for c in zip(*[
            (p.sigma, p.theta, p.xi, p.gamma) for p in params]))
        self.raw_sigma.copy_(_softplus_inv(sig))
        self.theta.copy_(th)
        # softplus cannot reach xi = 0 exactly; clamp to a tiny positive value
        self.raw_xi.copy_(_softplus_inv(xi.clamp_min(1e-12)))
        self.raw_gamma.copy_(_softplus_inv(gam))

    def manifest(self):
        with torch.no_grad():
            betas = morlet(self.sigma.double(), self.theta.double(), self.xi.double(),
                           self.gamma.double(), self.grid_size)[1].tolist()
        filters = []
        for idx, (p, b) in enumerate(zip(self.params(), betas)):
            filters.append({"j": idx // self.L, "l": idx % self.L, **asdict(p), "beta": b})
        return {
            "format": MANIFEST_FORMAT,
            "J": self.J,
            "L": self.L,
            "grid_size": self.grid_size,
            "base_sigma": self.base_sigma,
            "base_xi": self.base_xi,
            "gamma": self.base_gamma,
            "lowpass_sigma": self.lowpass_sigma,
            "filters": filters,
        }

    def export(self, path):
        """Write ``path`` (JSON manifest) and ``<stem>.bin`` (kernel dump).

        The dump holds float32 values of shape ``(J*L + 1, S, S, 2)``: the
        wavelets in flat ``(j, l)`` order followed by the low-pass, with the
        last axis holding (real, imag).
        """
        path = Path(path)
        with torch.no_grad():
            w = self.wavelets().detach().cpu()
            lp = self.lowpass().detach().cpu().to(w.real.dtype)
            stack = torch.cat([w, torch.complex(lp, torch.zeros_like(lp))[None]])
            arr = torch.view_as_real(stack.to(torch.complex64)).numpy()
        bin_path = path.with_suffix(".bin")
        write_dump(bin_path, arr, content="wavelets then lowpass; last axis (real, imag)")
        manifest = self.manifest()
        manifest["tensor"] = {"file": bin_path.name, "dtype": "<f4", "shape": list(arr.shape),
                              "order": "C"}
        path.write_text(json.dumps(manifest, indent=2))
        return manifest

    @classmethod
    def from_manifest(cls, manifest):
        if isinstance(manifest, (str, Path)):
            manifest = json.loads(Path(manifest).read_text())
        if manifest.get("format") != MANIFEST_FORMAT:
            raise ConfigurationError(f"not a filter-bank manifest: format={manifest.get('format')}")
        bank = cls(J=manifest["J"], L=manifest["L"], base_sigma=manifest["base_sigma"],
                   base_xi=manifest["base_xi"], gamma=manifest["gamma"],
                   grid_size=manifest["grid_size"])
        filters = sorted(manifest["filters"], key=lambda f: (f["j"], f["l"]))
        bank.set_params(MorletParams(f["sigma"], f["theta"], f["xi"], f["gamma"]) for f in filters)
        return bank


def make_filterbank(J, L, base_sigma=DEFAULT_BASE_SIGMA, base_xi=DEFAULT_BASE_XI, gamma=1.0,
                    grid_size=None):
    return MorletFilterBank(J=J, L=L, base_sigma=base_sigma, base_xi=base_xi, gamma=gamma,
                            grid_size=grid_size)


def _energy(params_vec, grid_size):
    values, _ = morlet(*params_vec, grid_size)
    return (values.abs() ** 2).sum()


def kernel_gradcheck(params, grid_size, step=1e-5):
    """Largest relative mismatch between autograd and central differences.

    The functional is the kernel energy ``sum |psi|^2``; derivatives are taken
    with respect to ``(sigma, theta, xi, gamma)`` in double precision. Each
    component's error is scaled by ``max(|analytic|, |numeric|, 1e-6 * g)``
    where ``g`` is the largest gradient magnitude, so that derivatives which
    vanish by symmetry do not divide by zero.
    """
    if not isinstance(params, MorletParams):
        params = MorletParams(*params)
    x = torch.tensor([params.sigma, params.theta, params.xi, params.gamma],
                     dtype=torch.float64, requires_grad=True)
    (analytic,) = torch.autograd.grad(_energy(x, grid_size), x)
    numeric = torch.empty(4, dtype=torch.float64)
    with torch.no_grad():
        for i in range(4):
            e = torch.zeros(4, dtype=torch.float64)
            e[i] = step
            numeric[i] = (_energy(x + e, grid_size) - _energy(x - e, grid_size)) / (2 * step)
    scale = torch.maximum(analytic.abs(), numeric.abs())
    floor = 1e-6 * float(scale.max()) if float(scale.max()) > 0 else 1.0
    err = (analytic - numeric).abs() / scale.clamp_min(floor)
    return float(err.max())


def random_params(rng, n):
    """Draw parameter sets from the ranges used by the property tests."""
    return [MorletParams(sigma=rng.uniform(0.5, 4.0), theta=rng.uniform(0.0, math.pi),
                         xi=rng.uniform(0.2, 3.0), gamma=rng.uniform(0.5, 2.0))
            for _ in range(n)]


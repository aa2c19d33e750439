import math

import pytest
import torch

from busip.errors import ConfigurationError
from busip.morlet import MorletParams, make_filterbank, make_morlet
from busip.scattering import (
    LocalScatteringPerceptron,
    conv2d_circular,
    num_channels,
    scatter,
    scatter_pooled,
    scattering_paths,
)
from gradutil import grad_check


@pytest.fixture(scope="module")
def bank64():
    return make_filterbank(3, 4).double().requires_grad_(False)


def test_delta_reproduces_kernel():
    k = make_morlet(MorletParams(1.0, 0.3, 1.5, 1.0), 9).values
    img = torch.zeros(32, 32, dtype=torch.float64)
    img[10, 20] = 1.0
    out = conv2d_circular(img, k)
    assert torch.allclose(out[6:15, 16:25], k, atol=1e-12)
    out[6:15, 16:25] = 0
    assert float(out.abs().max()) <= 1e-12


def test_constant_image_gives_zero():
    k = make_morlet(MorletParams(1.2, 0.9, 2.0, 0.8), 15).values
    c = 3.7
    out = conv2d_circular(torch.full((32, 32), c, dtype=torch.float64), k)
    assert float(out.abs().max()) <= 1e-6 * c * float(k.abs().sum())


def test_convolution_shift_covariance(rng):
    k = make_morlet(MorletParams(1.5, 0.4, 1.2, 1.0), 13).values
    img = torch.as_tensor(rng.random((40, 40)))
    a = conv2d_circular(torch.roll(img, (3, -5), (0, 1)), k)
    b = torch.roll(conv2d_circular(img, k), (3, -5), (0, 1))
    assert float((a - b).abs().max()) <= 1e-5


def test_kernel_larger_than_image_rejected():
    k = make_morlet(MorletParams(1.0, 0.0, 1.0, 1.0), 33).values
    with pytest.raises(ConfigurationError):
        conv2d_circular(torch.zeros(16, 16, dtype=torch.float64), k)


def test_default_bank_channel_count(bank64):
    fmap = scatter(torch.rand(64, 64, dtype=torch.float64), bank64)
    assert fmap.values.shape == (61, 64, 64)
    assert len(fmap.path_index) == 61


@pytest.mark.parametrize("J", range(1, 5))
@pytest.mark.parametrize("L", range(1, 7))
def test_channel_count_formula(J, L):
    paths = scattering_paths(J, L, 2)
    brute = 1 + sum(1 for j in range(J) for _ in range(L))
    brute += sum(1 for j1 in range(J) for j2 in range(J) if j2 > j1 for _ in range(L * L))
    assert len(paths) == brute == num_channels(J, L, 2) == 1 + J * L + math.comb(J, 2) * L * L
    assert all(p[1][0] > p[0][0] for p in paths if len(p) == 2)


def test_zero_image(bank64):
    assert float(scatter(torch.zeros(64, 64, dtype=torch.float64), bank64).values.abs().max()) == 0.0


def test_modulus_channels_nonnegative(bank64, rng):
    img = torch.as_tensor(rng.random((64, 64)))
    assert float(scatter(img, bank64).values[1:].min()) >= -1e-12


@pytest.mark.parametrize("trial", range(10))
def test_scatter_shift_covariance(bank64, trial):
    g = torch.Generator().manual_seed(trial)
    img = torch.rand(64, 64, dtype=torch.float64, generator=g)
    a = scatter(torch.roll(img, (5, 7), (0, 1)), bank64).values
    b = torch.roll(scatter(img, bank64).values, (5, 7), (1, 2))
    assert float((a - b).abs().max()) <= 1e-5


def test_non_finite_image_rejected(bank64):
    img = torch.zeros(64, 64, dtype=torch.float64)
    img[3, 3] = float("nan")
    with pytest.raises(ValueError):
        scatter(img, bank64)


def test_pooled_matches_full_then_pool(bank64, rng):
    img = torch.as_tensor(rng.random((2, 64, 64)))
    full = torch.nn.functional.avg_pool2d(scatter(img, bank64).values, 8)
    assert float((scatter_pooled(img, bank64, 2, 8) - full).abs().max()) <= 1e-9


def test_gradient_wrt_filter_params():
    bank = make_filterbank(1, 2, grid_size=7).double()
    img = torch.rand(8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    params = [bank.raw_sigma, bank.theta, bank.raw_xi, bank.raw_gamma]
    assert grad_check(lambda: scatter(img, bank).values.mean(), params) <= 1e-4


def test_gradient_wrt_image():
    bank = make_filterbank(1, 2, grid_size=7).double()
    img = torch.rand(8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    img.requires_grad_(True)
    assert grad_check(lambda: scatter(img, bank).values.square().mean(), [img]) <= 1e-4


def test_lsp_shape_and_determinism():
    torch.manual_seed(0)
    lsp = LocalScatteringPerceptron(embed_dim=128, stride=8).eval()
    x = torch.rand(2, 64, 64)
    y = lsp(x)
    assert y.shape == (2, 128, 8, 8)
    assert torch.equal(lsp(x[:1]), lsp(x[:1].clone()))


def test_lsp_token_shift():
    torch.manual_seed(0)
    lsp = LocalScatteringPerceptron(embed_dim=32, stride=8).double().eval()
    x = torch.rand(1, 64, 64, dtype=torch.float64)
    a = lsp(torch.roll(x, (8, 8), (1, 2)))
    b = torch.roll(lsp(x), (1, 1), (2, 3))
    assert float((a - b).abs().max()) <= 1e-4


def test_lsp_stride_mismatch():
    lsp = LocalScatteringPerceptron(embed_dim=16, stride=8)
    with pytest.raises(ConfigurationError):
        lsp(torch.rand(1, 60, 60))


def test_running_stats_update_only_in_training():
    lsp = LocalScatteringPerceptron(embed_dim=16, stride=8)
    lsp.eval()
    before = lsp.norm.running_var.clone()
    lsp(torch.rand(2, 64, 64))
    assert torch.equal(before, lsp.norm.running_var)
    lsp.train()
    lsp(torch.rand(2, 64, 64))
    assert not torch.equal(before, lsp.norm.running_var)

import json
import math

import numpy as np
import pytest
import torch

from busip.errors import ConfigurationError, ParameterDomainError
from busip.morlet import (
    GridSizeWarning,
    MorletFilterBank,
    MorletParams,
    gaussian_lowpass,
    kernel_gradcheck,
    make_filterbank,
    make_morlet,
    normalization_beta,
    random_params,
)
from busip.tensorio import read_dump


def brute_force_dft(values):
    """Direct O(S^4) DFT with numpy's sign convention."""
    S = values.shape[0]
    n = np.arange(S)
    E = np.exp(-2j * np.pi * np.outer(n, n) / S)
    return E @ values @ E.T


@pytest.mark.parametrize("bad", [(0.0, 0, 1, 1), (-1.0, 0, 1, 1), (1.0, 0, 1, 0.0),
                                 (1.0, 0, -0.1, 1), (float("nan"), 0, 1, 1)])
def test_invalid_params_rejected(bad):
    with pytest.raises(ParameterDomainError):
        MorletParams(*bad)
    with pytest.raises(ParameterDomainError):
        normalization_beta(bad, 33)


def test_beta_is_one_without_oscillation():
    assert normalization_beta(MorletParams(1.0, 0.0, 0.0, 1.0), 33) == pytest.approx(1.0, abs=1e-12)


def test_beta_closed_form():
    beta = normalization_beta(MorletParams(1.0, 0.4, 2.0, 1.0), 33)
    assert abs(beta - math.exp(-2.0)) <= 1e-3


@pytest.mark.xfail(strict=True, reason=(
    "discrete-grid beta aliases: at xi=2 rad/px the spectral replicas at 2*pi*k - xi*e_theta "
    "depend on theta relative to the lattice, giving a 4.6e-5 gap between theta=0.7 and 1.9"))
def test_beta_orientation_independent_for_isotropic_envelope():
    a = normalization_beta(MorletParams(1.0, 0.7, 2.0, 1.0), 33)
    b = normalization_beta(MorletParams(1.0, 1.9, 2.0, 1.0), 33)
    assert abs(a - b) <= 1e-6


def test_beta_orientation_dependence_is_lattice_aliasing_only():
    # quarter turns map the lattice onto itself, so beta is exactly invariant there
    for th in (0.0, 0.7, 1.1):
        a = normalization_beta(MorletParams(1.0, th, 2.0, 1.0), 33)
        b = normalization_beta(MorletParams(1.0, th + math.pi / 2, 2.0, 1.0), 33)
        assert abs(a - b) <= 1e-12
    # the residual shrinks with the alias strength exp(-sigma^2 |2 pi - xi|^2 / 2)
    a = normalization_beta(MorletParams(2.0, 0.7, 2.0, 1.0), 33)
    b = normalization_beta(MorletParams(2.0, 1.9, 2.0, 1.0), 33)
    assert abs(a - b) <= 1e-6


def test_even_grid_rejected():
    with pytest.raises(ConfigurationError):
        make_morlet(MorletParams(1.0, 0.0, 1.0, 1.0), 32)


def test_dft_peak_at_carrier_frequency():
    k = make_morlet(MorletParams(1.0, 0.0, 2.0, 1.0), 33).values.numpy()
    spec = np.abs(brute_force_dft(k))
    ky, kx = np.unravel_index(spec.argmax(), spec.shape)
    expected_kx = round(2.0 / (2 * math.pi) * 33)
    assert (ky, kx) == (0, expected_kx)


def test_quarter_turn_equivariance():
    k0 = make_morlet(MorletParams(1.5, 0.0, 1.5, 1.0), 33).values.numpy()
    k1 = make_morlet(MorletParams(1.5, math.pi / 2, 1.5, 1.0), 33).values.numpy()
    # theta + pi/2 evaluates the theta kernel at coordinates rotated by -pi/2
    assert np.abs(k1 - np.rot90(k0, -1)).max() <= 1e-10


def test_zero_mean_random_draws(rng):
    for p in random_params(rng, 100):
        k = make_morlet(p, 33).values
        assert float(k.sum().abs()) <= 1e-8 * float(k.abs().sum())
        assert torch.isfinite(k.real).all() and torch.isfinite(k.imag).all()


def test_kernel_deterministic():
    p = MorletParams(1.3, 0.2, 1.1, 0.7)
    a, b = make_morlet(p, 21).values, make_morlet(p, 21).values
    assert torch.equal(a, b)


def test_gradcheck_reference_point():
    assert kernel_gradcheck(MorletParams(1.2, 0.3, 1.7, 0.8), 17) <= 1e-4


def test_gradcheck_theta_vanishes_at_zero_frequency():
    x = torch.tensor([1.0, 0.4, 0.0, 1.0], dtype=torch.float64, requires_grad=True)
    from busip.morlet import morlet
    values, _ = morlet(*x, 17)
    (g,) = torch.autograd.grad((values.abs() ** 2).sum(), x)
    assert abs(float(g[1])) <= 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_gradcheck_random_seeds(seed):
    (p,) = random_params(np.random.default_rng(seed), 1)
    S = 2 * math.ceil(4 * p.sigma / min(p.gamma, 1.0)) + 1
    assert kernel_gradcheck(p, S) <= 1e-4


def test_filterbank_counts_and_dyadic_rule():
    bank = make_filterbank(3, 4)
    assert len(bank) == 12 and bank.wavelets().shape[0] == 12
    assert float(bank.lowpass().sum()) == pytest.approx(1.0, abs=1e-6)

    single = make_filterbank(1, 1, base_sigma=1.3)
    (p,) = single.params()
    assert p.theta == 0.0 and p.sigma == pytest.approx(1.3, rel=1e-6)

    two = make_filterbank(2, 2, base_sigma=1.0)
    ps = two.params()
    assert ps[two.index(1, 0)].sigma == pytest.approx(2.0, rel=1e-6)
    assert ps[two.index(1, 1)].xi == pytest.approx(ps[two.index(0, 1)].xi / 2, rel=1e-6)
    assert ps[two.index(0, 1)].theta == pytest.approx(math.pi / 2, rel=1e-6)


def test_lowpass_unit_sum_double():
    assert float(gaussian_lowpass(3.2, 27).sum()) == pytest.approx(1.0, abs=1e-8)


def test_small_grid_warns_but_builds():
    with pytest.warns(GridSizeWarning):
        bank = make_filterbank(3, 2, grid_size=9)
    assert bank.warnings and len(bank) == 6


def test_learned_params_stay_valid():
    bank = make_filterbank(2, 2)
    with torch.no_grad():
        bank.raw_sigma.fill_(-50.0)
        bank.raw_gamma.fill_(-50.0)
    for p in bank.params():
        assert p.sigma > 0 and p.gamma > 0 and p.xi >= 0


def test_manifest_round_trip(tmp_path):
    bank = make_filterbank(2, 3)
    with torch.no_grad():
        bank.theta.add_(0.1)
    manifest = bank.export(tmp_path / "bank.json")
    on_disk = json.loads((tmp_path / "bank.json").read_text())
    assert on_disk["J"] == 2 and on_disk["L"] == 3 and len(on_disk["filters"]) == 6
    arr, header = read_dump(tmp_path / "bank.bin")
    S = manifest["grid_size"]
    assert header["dtype"] == "<f4" and arr.shape == (7, S, S, 2)
    np.testing.assert_allclose(arr[:6, ..., 0], bank.wavelets().real.detach().numpy(), atol=1e-6)

    clone = MorletFilterBank.from_manifest(tmp_path / "bank.json")
    for a, b in zip(bank.params(), clone.params()):
        assert a.theta == pytest.approx(b.theta, abs=1e-6)
        assert a.sigma == pytest.approx(b.sigma, rel=1e-5)

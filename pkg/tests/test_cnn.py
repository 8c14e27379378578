"""CNN encoder: scale contracts, degenerate cases, gradient flow."""

import numpy as np
import pytest

from lesionseg.cnn import BasicBlock, CnnConfig, CnnEncoder, ConfigError
from lesionseg.tensor import Tensor, grad_check


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_paper_input_produces_paper_grids(rng):
    enc = CnnEncoder(CnnConfig.toy(), rng).eval()
    feats = enc(Tensor(rng.standard_normal((1, 3, 192, 256))))
    assert feats.g0.shape[2:] == (12, 16)
    assert feats.g1.shape[2:] == (24, 32)
    assert feats.g2.shape[2:] == (48, 64)


def test_zero_input_gives_zero_features(rng):
    enc = CnnEncoder(CnnConfig.toy(), rng).eval()
    feats = enc(Tensor(np.zeros((1, 3, 32, 32))))
    for f in (feats.g0, feats.g1, feats.g2):
        assert np.array_equal(f.data, np.zeros_like(f.data))


def test_toy_config_shapes(rng):
    enc = CnnEncoder(CnnConfig.toy(), rng).eval()
    feats = enc(Tensor(rng.standard_normal((1, 3, 32, 32))))
    assert feats.g0.shape == (1, 64, 2, 2)
    assert feats.g1.shape == (1, 32, 4, 4)
    assert feats.g2.shape == (1, 16, 8, 8)


def test_paper_shape_preset_widths():
    cfg = CnnConfig()
    assert cfg.block_channels == (64, 128, 256, 512)
    assert cfg.blocks_per_stage == (3, 4, 6, 3)


@pytest.mark.parametrize("hw", [(32, 48), (64, 64), (48, 80)])
def test_scale_contract_for_divisible_inputs(rng, hw):
    h, w = hw
    enc = CnnEncoder(CnnConfig.toy(), rng).eval()
    feats = enc(Tensor(rng.standard_normal((2, 3, h, w))))
    assert feats.g0.shape[2:] == (h // 16, w // 16)
    assert feats.g1.shape[2:] == (h // 8, w // 8)
    assert feats.g2.shape[2:] == (h // 4, w // 4)


def test_indivisible_input_rejected(rng):
    enc = CnnEncoder(CnnConfig.toy(), rng)
    with pytest.raises(ConfigError, match="divisible by 16"):
        enc(Tensor(np.zeros((1, 3, 30, 32))))


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        CnnConfig(stem_channels=0)
    with pytest.raises(ConfigError):
        CnnConfig(blocks_per_stage=(1, 0, 1, 1))


def test_zero_conv_residual_block_is_identity_on_nonneg_input(rng):
    block = BasicBlock(8, 8, stride=1, rng=rng).eval()
    for p in (block.conv1, block.conv2):
        p.weight.data[...] = 0.0
        p.bias.data[...] = 0.0
    x = np.abs(rng.standard_normal((1, 8, 6, 6)))
    out = block(Tensor(x))
    assert np.allclose(out.data, x, atol=1e-12)


def test_end_to_end_gradient_to_input(rng):
    enc = CnnEncoder(CnnConfig.toy(), rng).eval()

    def readout(img):
        return enc(img).g0.sum()

    err = grad_check(readout, Tensor(rng.standard_normal((1, 3, 16, 16))))
    assert err < 1e-3

"""コンセンサスプロンプト分配器と手作りプロンプトのテスト"""

import math

import numpy as np
import pytest
import torch

from vcp_cosod.core.exceptions import ShapeMismatchError
from vcp_cosod.core.models import BackboneConfig
from vcp_cosod.networks.cpd import (
    HandcraftedPromptEncoder,
    PromptDisperser,
    fuse_prompts,
    high_frequency_component,
)


def _naive_high_pass(image, ratio):
    """DFT 行列による高周波成分（中心化スペクトルの正方形を 0 にする）"""
    h, w = image.shape
    dh = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    dw = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    spectrum = np.roll(dh @ image @ dw, (h // 2, w // 2), axis=(0, 1))
    line = int((h * w * ratio) ** 0.5 // 2)
    for y in range(h // 2 - line, h // 2 + line):
        for x in range(w // 2 - line, w // 2 + line):
            spectrum[y, x] = 0
    spectrum = np.roll(spectrum, (-(h // 2), -(w // 2)), axis=(0, 1))
    return (np.conj(dh) @ spectrum @ np.conj(dw) / (h * w)).real


class TestHighFrequency:
    def test_zero_ratio_is_identity(self):
        x = torch.randn(2, 3, 8, 8, dtype=torch.float64)
        np.testing.assert_allclose(high_frequency_component(x, 0.0).numpy(), x.numpy(), atol=1e-12)

    def test_constant_image_has_no_high_frequency(self):
        x = torch.full((1, 3, 8, 8), 0.7, dtype=torch.float64)
        np.testing.assert_allclose(high_frequency_component(x, 0.25).numpy(), 0.0, atol=1e-12)

    @pytest.mark.parametrize("shape,ratio", [((8, 8), 0.25), ((6, 10), 0.3), ((7, 9), 0.5), ((16, 16), 0.1)])
    def test_matches_naive_dft(self, shape, ratio):
        rng = np.random.default_rng(0)
        image = rng.normal(size=shape)
        out = high_frequency_component(torch.from_numpy(image)[None, None], ratio)[0, 0].numpy()
        np.testing.assert_allclose(out, _naive_high_pass(image, ratio), atol=1e-9)

    def test_energy_non_increasing_in_ratio(self):
        x = torch.randn(1, 1, 16, 16, dtype=torch.float64)
        energies = [float((high_frequency_component(x, r) ** 2).sum()) for r in (0.0, 0.1, 0.25, 0.5, 0.9)]
        assert all(a >= b - 1e-9 for a, b in zip(energies, energies[1:]))

    def test_too_small(self):
        with pytest.raises(ShapeMismatchError):
            high_frequency_component(torch.randn(1, 3, 1, 8), 0.25)


class TestHandcraftedPrompt:
    def test_shapes_follow_stage_ladder(self):
        stages = BackboneConfig.tiny().stages
        encoder = HandcraftedPromptEncoder(stages, [2, 4, 8, 16], 0.25)
        prompts = encoder(torch.randn(2, 3, 64, 64))
        assert [p.shape for p in prompts] == [(2, 256, 2), (2, 64, 4), (2, 16, 8), (2, 4, 16)]

    def test_partial_chain(self):
        stages = BackboneConfig.tiny().stages[:2]
        encoder = HandcraftedPromptEncoder(stages, [2, 4], 0.25)
        assert len(encoder(torch.randn(1, 3, 64, 64))) == 2


class TestFusion:
    def test_concat(self):
        em, hand, co = (torch.randn(2, 5, 3) for _ in range(3))
        fused = fuse_prompts(em, hand, co, "concat")
        assert fused.shape == (2, 5, 6)
        assert torch.allclose(fused[..., :3], em + co)
        assert torch.allclose(fused[..., 3:], hand + co)

    def test_add(self):
        em, hand, co = (torch.randn(2, 5, 3) for _ in range(3))
        assert torch.allclose(fuse_prompts(em, hand, co, "add"), em + hand + 2 * co)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            fuse_prompts(torch.randn(1, 4, 3), torch.randn(1, 4, 2), torch.randn(1, 4, 3))


def _gelu(x):
    return 0.5 * x * (1 + np.vectorize(math.erf)(x / math.sqrt(2)))


class TestDisperser:
    def test_matches_oracle(self):
        torch.manual_seed(0)
        disperser = PromptDisperser(6, 3, 8, depth=2).double()
        x = torch.randn(2, 5, 6, dtype=torch.float64)
        for layer in range(2):
            down, up = disperser.down[layer], disperser.up[0]
            hidden = x.numpy() @ down.weight.detach().numpy().T + down.bias.detach().numpy()
            expected = _gelu(hidden) @ up.weight.detach().numpy().T + up.bias.detach().numpy()
            np.testing.assert_allclose(disperser(x, layer).detach().numpy(), expected, atol=1e-12)

    @pytest.mark.parametrize("sharing,n_down,n_up", [("adaptive", 3, 1), ("share", 1, 1), ("unshare", 3, 3)])
    def test_module_counts(self, sharing, n_down, n_up):
        disperser = PromptDisperser(6, 3, 8, depth=3, sharing=sharing)
        assert len(disperser.down) == n_down and len(disperser.up) == n_up

    def test_share_gives_same_prompt_per_layer(self):
        disperser = PromptDisperser(6, 3, 8, depth=3, sharing="share")
        x = torch.randn(1, 4, 6)
        assert torch.equal(disperser(x, 0), disperser(x, 2))

    def test_adaptive_differs_per_layer(self):
        disperser = PromptDisperser(6, 3, 8, depth=2)
        x = torch.randn(1, 4, 6)
        assert not torch.allclose(disperser(x, 0), disperser(x, 1))

    def test_layer_out_of_range(self):
        with pytest.raises(IndexError):
            PromptDisperser(6, 3, 8, depth=2)(torch.randn(1, 4, 6), 2)

    def test_gradcheck(self):
        disperser = PromptDisperser(4, 2, 5, depth=2).double()
        x = torch.randn(1, 3, 4, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda t: disperser(t, 1), (x,), eps=1e-6, atol=1e-5, rtol=1e-4)


def test_high_frequency_gradcheck():
    x = torch.randn(1, 1, 6, 6, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda t: high_frequency_component(t, 0.25), (x,), eps=1e-6, atol=1e-5)

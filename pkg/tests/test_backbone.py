"""凍結 Mix Transformer バックボーンのテスト"""

import re

import pytest
import torch

from vcp_cosod.core.exceptions import BackboneWeightsError, ShapeMismatchError
from vcp_cosod.core.models import BackboneConfig
from vcp_cosod.networks.backbone import (
    MixTransformer,
    build_backbone,
    load_pretrained,
    remap_segformer_key,
)


def _to_segformer_names(state):
    """本実装の名前 -> 公開 SegFormer の名前"""
    renamed = {}
    for key, value in state.items():
        key = re.sub(r"^patch_embeds\.(\d)\.", lambda m: f"patch_embed{int(m.group(1)) + 1}.", key)
        key = re.sub(r"^blocks\.(\d)\.", lambda m: f"block{int(m.group(1)) + 1}.", key)
        key = re.sub(r"^norms\.(\d)\.", lambda m: f"norm{int(m.group(1)) + 1}.", key)
        renamed[key] = value
    return renamed


@pytest.fixture
def backbone():
    return build_backbone(BackboneConfig.tiny(), None, init_seed=0)


class TestForward:
    def test_token_counts_per_stage(self, backbone):
        features = backbone(torch.randn(2, 3, 64, 64))
        assert [f.tokens.shape for f in features] == [
            (2, 256, 8), (2, 64, 16), (2, 16, 32), (2, 4, 64),
        ]
        assert [(f.height, f.width) for f in features] == [(16, 16), (8, 8), (4, 4), (2, 2)]

    def test_zero_prompt_equals_promptless(self, backbone):
        x = torch.randn(2, 3, 64, 64)
        plain = backbone(x)

        def zeros(stage, layer, embedding):
            return torch.zeros_like(embedding.tokens)

        prompted = backbone.forward_with_prompts(x, zeros)
        for a, b in zip(plain, prompted):
            assert torch.equal(a.tokens, b.tokens)

    def test_nonzero_prompt_changes_output(self, backbone):
        x = torch.randn(1, 3, 64, 64)

        def ones(stage, layer, embedding):
            return torch.ones_like(embedding.tokens) if stage == 0 else None

        plain = backbone(x)
        prompted = backbone.forward_with_prompts(x, ones)
        assert not torch.allclose(plain[0].tokens, prompted[0].tokens)

    def test_prompt_shape_mismatch_raises(self, backbone):
        def bad(stage, layer, embedding):
            return torch.zeros(1, 3, 5)

        with pytest.raises(ShapeMismatchError):
            backbone.forward_with_prompts(torch.randn(1, 3, 64, 64), bad)

    def test_input_not_divisible_by_32_raises(self, backbone):
        with pytest.raises(ShapeMismatchError):
            backbone(torch.randn(1, 3, 48, 64))

    def test_same_seed_same_weights(self):
        a = build_backbone(BackboneConfig.tiny(), None, init_seed=3)
        b = build_backbone(BackboneConfig.tiny(), None, init_seed=3)
        for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert ka == kb and torch.equal(va, vb)


class TestFrozen:
    def test_all_parameters_frozen(self, backbone):
        assert all(not p.requires_grad for p in backbone.parameters())

    def test_train_mode_is_ignored(self, backbone):
        backbone.train()
        assert not backbone.training
        assert all(not m.training for m in backbone.modules())

    def test_gradient_reaches_prompt_not_weights(self, backbone):
        prompt = torch.zeros(1, 256, 8, requires_grad=True)

        def first_layer_only(stage, layer, embedding):
            return prompt if (stage, layer) == (0, 0) else None

        features = backbone.forward_with_prompts(torch.randn(1, 3, 64, 64), first_layer_only)
        features[-1].tokens.pow(2).sum().backward()
        assert prompt.grad is not None
        assert prompt.grad.abs().sum() > 0
        assert all(p.grad is None for p in backbone.parameters())


class TestPretrainedWeights:
    def test_remap_segformer_keys(self):
        assert remap_segformer_key("backbone.block1.0.attn.q.weight") == "blocks.0.0.attn.q.weight"
        assert remap_segformer_key("patch_embed2.proj.weight") == "patch_embeds.1.proj.weight"
        assert remap_segformer_key("module.norm4.bias") == "norms.3.bias"
        assert remap_segformer_key("block3.1.norm1.weight") == "blocks.2.1.norm1.weight"

    def test_load_roundtrip_from_segformer_names(self, backbone, tmp_path):
        path = tmp_path / "mit_tiny.pth"
        state = _to_segformer_names(backbone.state_dict())
        state["head.weight"] = torch.zeros(3)
        torch.save({"state_dict": state}, path)
        loaded = load_pretrained(path, BackboneConfig.tiny())
        for key, value in backbone.state_dict().items():
            assert torch.equal(loaded.state_dict()[key], value)
        assert all(not p.requires_grad for p in loaded.parameters())

    def test_missing_file(self, tmp_path):
        with pytest.raises(BackboneWeightsError):
            load_pretrained(tmp_path / "none.pth", BackboneConfig.tiny())

    def test_shape_mismatch(self, backbone, tmp_path):
        state = backbone.state_dict()
        state["norms.0.weight"] = torch.ones(5)
        path = tmp_path / "bad.pth"
        torch.save(state, path)
        with pytest.raises(BackboneWeightsError, match="norms.0.weight"):
            load_pretrained(path, BackboneConfig.tiny())

    def test_missing_key(self, backbone, tmp_path):
        state = backbone.state_dict()
        del state["norms.3.bias"]
        path = tmp_path / "partial.pth"
        torch.save(state, path)
        with pytest.raises(BackboneWeightsError, match="norms.3.bias"):
            load_pretrained(path, BackboneConfig.tiny())

    @pytest.mark.parametrize("name", ["corrupt.pth", "corrupt.npz"])
    def test_corrupt_file(self, tmp_path, name):
        path = tmp_path / name
        path.write_bytes(b"PK\x03\x04 not an archive")
        with pytest.raises(BackboneWeightsError, match="読み込めません"):
            load_pretrained(path, BackboneConfig.tiny())

    def test_truncated_file(self, backbone, tmp_path):
        path = tmp_path / "mit_tiny.pth"
        torch.save(backbone.state_dict(), path)
        path.write_bytes(path.read_bytes()[:100])
        with pytest.raises(BackboneWeightsError):
            load_pretrained(path, BackboneConfig.tiny())


@pytest.mark.slow
def test_b4_deepest_stage_shape():
    model = MixTransformer(BackboneConfig.mit_b4())
    with torch.no_grad():
        features = model(torch.randn(1, 3, 288, 288))
    assert features[-1].tokens.shape == (1, 81, 512)
    assert features[0].tokens.shape == (1, 72 * 72, 64)

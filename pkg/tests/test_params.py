"""学習可能パラメータ数（B4 規模の予算とトイ構成の手計算）のテスト"""

import dataclasses

import pytest

from vcp_cosod.core.models import ModelConfig
from vcp_cosod.networks.model import count_tunable_params
from vcp_cosod.processors.param_report import (
    VARIANTS,
    count_params,
    report_params,
    variant_config,
)


@pytest.fixture(scope="module")
def b4_counts():
    base = ModelConfig()
    return {name: count_params(variant_config(base, name)) for name in VARIANTS}


class TestB4Budget:
    @pytest.mark.parametrize("name,low,high", [
        ("default", 4.75e6, 5.25e6),
        ("r8", 3.006e6, 3.674e6),
        ("r8_d96", 2.817e6, 3.443e6),
        ("share", 4.077e6, 4.983e6),
        ("unshare", 5.202e6, 6.358e6),
    ])
    def test_total_within_window(self, b4_counts, name, low, high):
        assert low <= b4_counts[name]["total"] <= high

    def test_head_alone(self, b4_counts):
        assert 1.341e6 <= b4_counts["default"]["head"] <= 1.639e6

    def test_backbone_contributes_nothing(self, b4_counts):
        assert all(c["backbone"] == 0 for c in b4_counts.values())

    def test_variant_ordering(self, b4_counts):
        assert b4_counts["share"]["total"] < b4_counts["default"]["total"] < b4_counts["unshare"]["total"]
        assert b4_counts["r8"]["total"] < b4_counts["default"]["total"]
        assert b4_counts["r8_d96"]["total"] < b4_counts["r8"]["total"]
        stages = [b4_counts[n]["total"] for n in ("stage1", "stage12", "stage123", "default")]
        assert stages == sorted(stages)

    def test_checkpoint_size_estimate(self):
        row = report_params(ModelConfig())[0]
        assert 19.0 <= row.size_mb <= 21.0

    def test_variant_rows(self):
        rows = report_params(ModelConfig(), variants=True)
        assert [r.name for r in rows] == list(VARIANTS)


def _cpg_count(c, cr, cfg):
    hidden = cfg.seed_mlp_hidden
    mlp = (cfg.j * cr * hidden + hidden) + cfg.seed_mlp_depth * (hidden * hidden + hidden) + (hidden * cr + cr)
    fuse = cfg.k * cr + cr + cr * cr + cr
    return (c * cr + cr) + cfg.j * cr + cr * cfg.j + mlp + (2 * cr + 1) + fuse + 2 * 49


def _handcrafted_count(stages, reduced, in_channels=3):
    total, prev = 0, in_channels
    for spec, cr in zip(stages, reduced):
        total += prev * cr * spec.patch_size ** 2 + cr + 2 * cr
        prev = cr
    return total


def _cpd_count(spec, cr, fused):
    return spec.depth * (fused * cr + cr) + (cr * spec.channels + spec.channels)


class TestTinyHandCount:
    def test_matches_formula(self, tiny_config, tiny_model):
        counts = count_tunable_params(tiny_model)
        stages = tiny_config.backbone.stages
        reduced = [s.channels // tiny_config.cpg.r for s in stages]
        assert counts["cpg"] == sum(_cpg_count(s.channels, cr, tiny_config.cpg) for s, cr in zip(stages, reduced))
        assert counts["handcrafted"] == _handcrafted_count(stages, reduced)
        assert counts["cpd"] == sum(_cpd_count(s, cr, 2 * cr) for s, cr in zip(stages, reduced))
        assert counts["backbone"] == 0
        assert counts["total"] == counts["cpg"] + counts["handcrafted"] + counts["cpd"] + counts["head"]

    def test_meta_count_equals_real_count(self, tiny_config, tiny_model):
        assert count_params(tiny_config) == count_tunable_params(tiny_model)

    def test_stage_mask_drops_modules(self, tiny_config):
        config = dataclasses.replace(tiny_config, stage_mask=(True, True, False, False))
        counts = count_params(config)
        stages = config.backbone.stages[:2]
        reduced = [s.channels // config.cpg.r for s in stages]
        assert counts["handcrafted"] == _handcrafted_count(stages, reduced)
        assert counts["cpd"] == sum(_cpd_count(s, cr, 2 * cr) for s, cr in zip(stages, reduced))

    def test_ablations(self, tiny_config):
        no_hand = dataclasses.replace(tiny_config, cpd=dataclasses.replace(tiny_config.cpd, use_handcrafted=False))
        assert count_params(no_hand)["handcrafted"] == 0
        no_co = dataclasses.replace(tiny_config, cpd=dataclasses.replace(tiny_config.cpd, use_consensus=False))
        stages = tiny_config.backbone.stages
        assert count_params(no_co)["cpg"] == sum(
            s.channels * (s.channels // 4) + s.channels // 4 for s in stages
        )

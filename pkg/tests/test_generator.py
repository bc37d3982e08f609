import json

import pytest
import torch
import torch.nn as nn

from p2ld.generator import (
    DecodeLayer,
    EncoderStageSpec,
    Generator,
    GeneratorConfig,
    GeneratorConfigError,
    ResNeXtBlock,
    build_pds,
    fuse_sum,
    tiny_generator_config,
)


def expected_encoder_ladder(size, stages):
    """Independent shape-tracing oracle for the stride schedule."""
    out, side = [], size
    for spec in stages:
        side //= spec.stride
        out.append((spec.out_channels, side, side))
    return out


class TestResNeXtBlock:
    def test_identity_residual(self):
        torch.manual_seed(0)
        block = ResNeXtBlock(16, 16, stride=1, cardinality=2)
        nn.init.zeros_(block.branch[6].weight)
        nn.init.zeros_(block.branch[6].bias)
        x = torch.randn(2, 16, 8, 8)
        assert torch.equal(block(x), x)

    def test_stage_shapes(self):
        torch.manual_seed(0)
        block = ResNeXtBlock(64, 256, stride=1, cardinality=32)
        assert block(torch.randn(1, 64, 64, 64)).shape == (1, 256, 64, 64)
        block = ResNeXtBlock(256, 512, stride=2, cardinality=32)
        assert block(torch.randn(1, 256, 32, 32)).shape == (1, 512, 16, 16)

    def test_cardinality_must_divide_width(self):
        with pytest.raises(GeneratorConfigError):
            ResNeXtBlock(16, 16, cardinality=3)  # width 8, 3 does not divide


class TestEncoder:
    def test_default_ladder_at_32(self):
        torch.manual_seed(0)
        gen = Generator(GeneratorConfig(input_size=32))
        feats = gen.encode(torch.randn(1, 3, 32, 32))
        expected = expected_encoder_ladder(32, GeneratorConfig().encoder_stages)
        assert [tuple(f.shape[1:]) for f in feats] == expected
        assert tuple(feats[-1].shape[1:]) == (2048, 1, 1)

    def test_batch_dimension(self):
        torch.manual_seed(0)
        gen = Generator(tiny_generator_config())
        feats = gen.encode(torch.randn(3, 3, 32, 32))
        assert all(f.shape[0] == 3 for f in feats)

    def test_wrong_channels_rejected(self):
        gen = Generator(tiny_generator_config())
        with pytest.raises(ValueError):
            gen.encode(torch.randn(1, 1, 32, 32))


class TestPds:
    def test_chain_length_and_shape(self):
        torch.manual_seed(0)
        pds = build_pds(64, 1024, 256, 32)  # log2(256/32) = 3 stride-2 convs
        convs = [m for m in pds.modules() if isinstance(m, nn.Conv2d)]
        assert len(convs) == 3 and all(c.stride == (2, 2) for c in convs)
        assert pds(torch.randn(1, 64, 256, 256)).shape == (1, 1024, 32, 32)

    def test_projection_only_when_matched(self):
        torch.manual_seed(0)
        pds = build_pds(2048, 1024, 16, 16)
        convs = [m for m in pds.modules() if isinstance(m, nn.Conv2d)]
        assert len(convs) == 1 and convs[0].kernel_size == (1, 1)
        assert pds(torch.randn(1, 2048, 16, 16)).shape == (1, 1024, 16, 16)

    def test_upsampling_direction_rejected(self):
        with pytest.raises(GeneratorConfigError):
            build_pds(64, 64, 16, 32)

    def test_non_power_of_two_ratio_rejected(self):
        with pytest.raises(GeneratorConfigError):
            build_pds(64, 64, 96, 32)
        with pytest.raises(GeneratorConfigError):
            build_pds(64, 64, 100, 32)


class TestFuse:
    def test_additive_identity(self):
        x = torch.randn(1, 4, 8, 8)
        zeros = [torch.zeros_like(x), torch.zeros_like(x)]
        assert torch.equal(fuse_sum(x, zeros), x)

    def test_elementwise_sum(self):
        a = torch.tensor([[[[1.0, 2.0]]]])
        b = torch.tensor([[[[3.0, 4.0]]]])
        assert torch.equal(fuse_sum(a, [b]), torch.tensor([[[[4.0, 6.0]]]]))

    def test_channel_mismatch_names_stage(self):
        prev = torch.zeros(1, 64, 4, 4)
        bad = torch.zeros(1, 128, 4, 4)
        with pytest.raises(ValueError, match="stage 3"):
            fuse_sum(prev, [bad], labels=[3])


class TestDecodeLayer:
    def test_conv_up_doubles(self):
        torch.manual_seed(0)
        layer = DecodeLayer(1024, 1024, "conv_up")
        assert layer(torch.randn(1, 1024, 16, 16)).shape == (1, 1024, 32, 32)

    def test_nearest_neighbor_pattern(self):
        layer = DecodeLayer(1, 1, "conv_up")
        up = layer.body[2]
        assert isinstance(up, nn.Upsample) and up.mode == "nearest"
        x = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        expected = torch.tensor(
            [[[[1.0, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]]]
        )
        assert torch.equal(up(x), expected)

    def test_convtranspose_up_doubles(self):
        torch.manual_seed(0)
        layer = DecodeLayer(8, 4, "convtranspose_up")
        assert layer(torch.randn(1, 8, 16, 16)).shape == (1, 4, 32, 32)

    def test_five_chained_layers_reach_full_resolution(self):
        torch.manual_seed(0)
        x = torch.randn(1, 4, 16, 16)
        for _ in range(5):
            x = DecodeLayer(4, 4, "conv_up")(x)
        assert x.shape[-1] == 512  # 16 * 2^5


class TestGenerator:
    def test_size_preserved_small(self):
        torch.manual_seed(0)
        gen = Generator(tiny_generator_config(128))
        y = gen(torch.rand(2, 3, 128, 128) * 2 - 1)
        assert y.shape == (2, 3, 128, 128)
        assert float(y.min()) > -1.0 and float(y.max()) < 1.0

    def test_decoder_resolution_ladder(self):
        torch.manual_seed(0)
        cfg = tiny_generator_config(64)
        gen = Generator(cfg)
        sides = []
        hooks = [
            layer.register_forward_hook(lambda m, i, o: sides.append(o.shape[-1]))
            for layer in gen.decode_layers
        ]
        gen(torch.rand(1, 3, 64, 64) * 2 - 1)
        for h in hooks:
            h.remove()
        assert sides == [64 // 2 ** (5 - k) for k in range(1, 6)]

    def test_zeroed_output_conv_gives_zero(self):
        torch.manual_seed(0)
        gen = Generator(tiny_generator_config())
        nn.init.zeros_(gen.out_conv.weight)
        nn.init.zeros_(gen.out_conv.bias)
        y = gen(torch.rand(1, 3, 32, 32) * 2 - 1)
        assert torch.equal(y, torch.zeros_like(y))

    def test_unnormalized_input_warns(self):
        torch.manual_seed(0)
        gen = Generator(tiny_generator_config())
        with pytest.warns(UserWarning, match="normalize"):
            gen(torch.rand(1, 3, 32, 32) * 255)

    def test_skip_ablation_equivalence(self):
        torch.manual_seed(0)
        cfg_off = tiny_generator_config(64, skips_enabled=False)
        gen_off = Generator(cfg_off)
        cfg_on = tiny_generator_config(64, skips_enabled=True)
        gen_on = Generator(cfg_on)
        gen_on.load_state_dict(gen_off.state_dict(), strict=False)
        x = torch.rand(1, 3, 64, 64) * 2 - 1
        all_routes = {(k, i) for k in range(1, 6) for i in gen_on.skip_stages[k - 1]}
        with torch.no_grad():
            assert torch.equal(gen_on(x, drop_skips=all_routes), gen_off(x))

    def test_stage1_feeds_all_five_decoder_stages(self):
        gen = Generator(tiny_generator_config())
        assert [1 in s for s in gen.skip_stages] == [True] * 5
        assert gen.skip_stages == [[1, 2, 3, 4], [1, 2, 3, 4], [1, 2, 3], [1, 2], [1]]

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_gradient_through_each_skip_path(self, k):
        # isolate one F1 route: cut the encoder chain after stage 1 and zero
        # every other F1 skip, then check stage-1 parameters still learn
        torch.manual_seed(0)
        gen = Generator(tiny_generator_config(64))
        x = torch.rand(1, 3, 64, 64) * 2 - 1
        f1 = gen.encoder.stages[0](x)
        feats = [f1]
        h = f1.detach()
        for stage in gen.encoder.stages[1:]:
            h = stage(h)
            feats.append(h)
        drop = {(j, 1) for j in range(1, 6) if j != k}
        out = gen.decode(feats, drop_skips=drop)
        out.sum().backward()
        grads = [p.grad for p in gen.encoder.stages[0].parameters()]
        assert all(g is not None for g in grads)
        assert max(float(g.abs().max()) for g in grads) > 0

    def test_all_parameters_receive_finite_gradients(self):
        torch.manual_seed(0)
        gen = Generator(tiny_generator_config())
        x = torch.rand(1, 3, 32, 32) * 2 - 1
        target = torch.rand(1, 3, 32, 32) * 2 - 1
        loss = (gen(x) - target).abs().mean()
        loss.backward()
        for name, p in gen.named_parameters():
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name

    def test_fusion_concat_mode_runs(self):
        torch.manual_seed(0)
        gen = Generator(tiny_generator_config(fusion_mode="concat"))
        y = gen(torch.rand(1, 3, 32, 32) * 2 - 1)
        assert y.shape == (1, 3, 32, 32)

    def test_config_json_round_trip(self):
        cfg = GeneratorConfig()
        again = GeneratorConfig.from_json(cfg.to_json())
        assert again == cfg
        doc = json.loads(cfg.to_json())
        assert doc["fusion_mode"] == "sum" and doc["skips_enabled"] is True
        assert doc["decoder_channels"] == [1024, 512, 256, 128, 64]

    def test_config_validation(self):
        with pytest.raises(GeneratorConfigError):
            GeneratorConfig(input_size=100)
        with pytest.raises(GeneratorConfigError):
            GeneratorConfig(fusion_mode="mean")
        with pytest.raises(GeneratorConfigError):
            GeneratorConfig(decoder_channels=(64, 32))
        with pytest.raises(GeneratorConfigError):
            GeneratorConfig(
                encoder_stages=(
                    EncoderStageSpec(4, 1, 1, 1),
                    EncoderStageSpec(8, 2, 1, 2),
                    EncoderStageSpec(8, 2, 1, 2),
                    EncoderStageSpec(8, 2, 1, 2),
                    EncoderStageSpec(8, 2, 1, 2),
                )
            )  # strides multiply to 16

    def test_encoder_weight_file_round_trip(self, tmp_path):
        torch.manual_seed(0)
        gen = Generator(tiny_generator_config())
        path = tmp_path / "encoder.pt"
        torch.save(gen.encoder.state_dict(), path)
        torch.manual_seed(99)
        cfg = tiny_generator_config(pretrained_encoder=str(path))
        gen2 = Generator(cfg)
        for a, b in zip(gen.encoder.parameters(), gen2.encoder.parameters()):
            assert torch.equal(a, b)

    def test_weight_manifest_names_and_shapes(self):
        gen = Generator(tiny_generator_config())
        manifest = gen.weight_manifest()
        for name, p in gen.named_parameters():
            assert manifest[name] == list(p.shape)

import numpy as np
import pytest
import torch

from uwdepth.data import ImageTensor
from uwdepth.errors import ConfigError, ShapeError
from uwdepth.models import (
    CHECKPOINT_MAGIC,
    DenseBlock,
    DiscriminatorSpec,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    forward_discriminator,
    forward_generator,
    load_checkpoint,
    registry_get_backbone,
    restore_networks,
    save_checkpoint,
)

from oracles import (
    generator_param_count,
    patchgan_layer_geometry,
    patchgan_output_size,
    receptive_field,
)

SMALL_SPEC = GeneratorSpec(num_blocks_per_side=2, layers_per_block=3, growth=8, stem_filters=16)


class TestGeneratorSpec:
    def test_defaults_match_architecture_description(self):
        spec = GeneratorSpec()
        assert spec.num_blocks_per_side == 5
        assert spec.layers_per_block == 5
        assert spec.growth == 16
        assert spec.spatial_divisor == 32

    def test_invalid_channels_rejected(self):
        with pytest.raises(ValueError):
            GeneratorSpec(in_channels=2)
        with pytest.raises(ValueError):
            GeneratorSpec(num_blocks_per_side=0)


class TestBuildGenerator:
    def test_param_count_matches_layer_table(self):
        # the expected count is computed layer-by-layer in the oracle module
        for spec in (GeneratorSpec(), SMALL_SPEC, GeneratorSpec(in_channels=4, out_channels=3)):
            net = build_generator(spec, 0)
            expected = generator_param_count(
                in_channels=spec.in_channels,
                out_channels=spec.out_channels,
                num_blocks_per_side=spec.num_blocks_per_side,
                layers_per_block=spec.layers_per_block,
                growth=spec.growth,
                stem_filters=spec.stem_filters,
            )
            assert net.num_parameters() == expected

    def test_same_seed_identical_parameters(self):
        a = build_generator(SMALL_SPEC, 123)
        b = build_generator(SMALL_SPEC, 123)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self):
        a = build_generator(SMALL_SPEC, 0)
        b = build_generator(SMALL_SPEC, 1)
        assert any(not torch.equal(pa, pb) for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()))

    def test_reverse_direction_builds(self):
        net = build_generator(GeneratorSpec(in_channels=4, out_channels=3), 0, "F")
        x = torch.rand(1, 4, 32, 32) * 2 - 1
        with torch.no_grad():
            out = net.module(x)
        assert out.shape == (1, 3, 32, 32)


class TestForwardGenerator:
    def test_shape_contract(self):
        net = build_generator(SMALL_SPEC, 0)
        x = torch.rand(2, 3, 32, 32) * 2 - 1
        with torch.no_grad():
            out = forward_generator(net, x)
        assert out.shape == (2, 4, 32, 32)

    def test_tanh_bounds(self):
        net = build_generator(SMALL_SPEC, 0)
        x = torch.rand(1, 3, 32, 32) * 2 - 1
        with torch.no_grad():
            out = forward_generator(net, x)
        assert out.max() <= 1.0 and out.min() >= -1.0
        assert torch.isfinite(out).all()

    def test_indivisible_dims_name_divisor(self):
        net = build_generator(GeneratorSpec(), 0)  # divisor 32
        x = torch.zeros(1, 3, 80, 80)  # 80 % 32 != 0
        with pytest.raises(ShapeError, match="32"):
            forward_generator(net, x)

    def test_divisible_dims_pass_even_when_quotient_is_odd(self):
        # 96 = 3 * 32: every halving lands on an integer, bottleneck at 3x3
        net = build_generator(
            GeneratorSpec(num_blocks_per_side=5, layers_per_block=1, growth=2, stem_filters=4), 0
        )
        with torch.no_grad():
            out = net.module(torch.zeros(1, 3, 96, 96))
        assert out.shape == (1, 4, 96, 96)

    def test_channel_mismatch_rejected(self):
        net = build_generator(SMALL_SPEC, 0)
        with pytest.raises(ShapeError):
            forward_generator(net, torch.zeros(1, 4, 32, 32))

    def test_image_tensor_round_trip(self):
        net = build_generator(SMALL_SPEC, 0)
        arr = np.random.default_rng(0).uniform(-1, 1, (1, 32, 32, 3)).astype(np.float32)
        out = forward_generator(net, ImageTensor(arr))
        assert isinstance(out, ImageTensor)
        assert out.data.shape == (1, 32, 32, 4)

    def test_fully_convolutional_size_scaling(self):
        net = build_generator(SMALL_SPEC, 0)
        with torch.no_grad():
            small = net.module(torch.zeros(1, 3, 32, 32))
            large = net.module(torch.zeros(1, 3, 64, 64))
        assert small.shape[2:] == (32, 32)
        assert large.shape[2:] == (64, 64)

    def test_cycle_shape_closure(self):
        g = build_generator(SMALL_SPEC, 0, "G")
        f = build_generator(
            GeneratorSpec(
                in_channels=4, out_channels=3, num_blocks_per_side=2, layers_per_block=3,
                growth=8, stem_filters=16,
            ),
            1,
            "F",
        )
        x = torch.rand(1, 3, 32, 32) * 2 - 1
        y = torch.rand(1, 4, 32, 32) * 2 - 1
        with torch.no_grad():
            assert f.module(g.module(x)).shape == x.shape
            assert g.module(f.module(y)).shape == y.shape


class TestDenseBlock:
    def test_output_channels_are_input_plus_growth(self):
        for cin, layers, growth in ((16, 3, 8), (7, 2, 2), (48, 5, 16)):
            block = DenseBlock(cin, layers, growth)
            out = block(torch.rand(1, cin, 8, 8))
            assert out.shape[1] == cin + layers * growth
            assert block.out_channels == cin + layers * growth

    def test_block_input_is_passed_through(self):
        block = DenseBlock(4, 2, 3)
        x = torch.rand(1, 4, 8, 8)
        out = block(x)
        assert torch.equal(out[:, :4], x)


class TestDiscriminator:
    def test_output_size_matches_conv_arithmetic(self):
        net = build_discriminator(DiscriminatorSpec(in_channels=3), 0)
        with torch.no_grad():
            out = net.module(torch.rand(1, 3, 128, 128))
        expected = patchgan_output_size(128, 3)
        assert out.shape == (1, 1, expected, expected)

    def test_receptive_field_arithmetic_is_70(self):
        assert receptive_field(patchgan_layer_geometry(3)) == 70

    def test_gradient_footprint_is_70x70(self):
        # instance norm couples all pixels through its statistics, so the
        # conv-geometry receptive field is probed on a norm-free build
        spec = DiscriminatorSpec(in_channels=3, normalize=False)
        net = build_discriminator(spec, 0)
        x = torch.zeros(1, 3, 128, 128, requires_grad=True)
        out = net.module(x)
        h, w = out.shape[2], out.shape[3]
        out[0, 0, h // 2, w // 2].backward()
        footprint = (x.grad[0].abs().sum(dim=0) > 0).numpy()
        rows = np.flatnonzero(footprint.any(axis=1))
        cols = np.flatnonzero(footprint.any(axis=0))
        assert rows[-1] - rows[0] + 1 == 70
        assert cols[-1] - cols[0] + 1 == 70

    def test_shift_outside_field_leaves_element_unchanged(self):
        spec = DiscriminatorSpec(in_channels=3, normalize=False)
        net = build_discriminator(spec, 0)
        rng = torch.Generator().manual_seed(0)
        x = torch.rand(1, 3, 128, 128, generator=rng)
        with torch.no_grad():
            out = net.module(x)
            h, w = out.shape[2], out.shape[3]
            center = out[0, 0, h // 2, w // 2].item()
            x2 = x.clone()
            x2[:, :, :10, :10] = 0.0  # far corner, outside the 70x70 field
            out2 = net.module(x2)
        assert out2[0, 0, h // 2, w // 2].item() == pytest.approx(center, abs=0.0)

    def test_channel_mismatch_rejected(self):
        d_y = build_discriminator(DiscriminatorSpec(in_channels=4), 0, "D_Y")
        with pytest.raises(ShapeError):
            forward_discriminator(d_y, torch.zeros(1, 3, 64, 64))

    def test_scores_are_unbounded_single_channel(self):
        net = build_discriminator(DiscriminatorSpec(in_channels=4, base_filters=16), 0)
        with torch.no_grad():
            out = forward_discriminator(net, torch.rand(2, 4, 64, 64))
        assert out.shape[1] == 1
        assert torch.isfinite(out).all()


class TestRegistry:
    def test_densenet_registered(self):
        builder = registry_get_backbone("densenet")
        assert builder(SMALL_SPEC) is not None

    def test_unknown_backbone_lists_known(self):
        with pytest.raises(ConfigError, match="densenet"):
            registry_get_backbone("no-such-net")

    def test_stub_backbones_raise_not_implemented(self):
        for stub in ("unet", "resnet"):
            builder = registry_get_backbone(stub)
            with pytest.raises(NotImplementedError):
                builder(SMALL_SPEC)


class TestCheckpoint:
    def _nets(self):
        return {
            "G": build_generator(SMALL_SPEC, 0, "G"),
            "D_X": build_discriminator(DiscriminatorSpec(in_channels=3, base_filters=8), 1, "D_X"),
        }

    def test_round_trip_preserves_parameters(self, tmp_path):
        nets = self._nets()
        path = save_checkpoint(tmp_path / "ckpt.pt", nets, step=7)
        payload = load_checkpoint(path)
        assert payload["magic"] == CHECKPOINT_MAGIC
        restored, step = restore_networks(payload)
        assert step == 7
        for role, net in nets.items():
            for (name, p), (name2, p2) in zip(
                net.named_parameters(), restored[role].named_parameters()
            ):
                assert name == name2
                assert torch.equal(p, p2)

    def test_save_load_save_identical_bytes(self, tmp_path):
        # equal file names: the torch archive embeds its own basename
        nets = self._nets()
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        p1 = save_checkpoint(tmp_path / "a" / "ckpt.pt", nets, step=3)
        payload = load_checkpoint(p1)
        restored, step = restore_networks(payload)
        p2 = save_checkpoint(tmp_path / "b" / "ckpt.pt", restored, step=step)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pt"
        torch.save({"magic": "SOMETHING-ELSE", "step": 0}, path)
        with pytest.raises(ConfigError, match="magic"):
            load_checkpoint(path)

    def test_non_checkpoint_file_rejected(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"garbage")
        with pytest.raises(ConfigError):
            load_checkpoint(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path / "absent.pt")

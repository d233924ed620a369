"""Generator and discriminator networks plus checkpoint serialization.

The generator is a fully-convolutional dense-block autoencoder: a stem conv,
``num_blocks_per_side`` encoder stages (dense block, then 1x1 conv + 2x2 avg
pool transition down), a bottleneck dense block, and mirrored decoder stages
(strided transposed-conv transition up, skip concatenation, dense block),
finished by a 1x1 projection bounded with tanh. Every dense block returns the
concatenation of its input with all layer outputs, so block output channels
are always ``in + layers_per_block * growth``.

The discriminator is the standard 70x70 patch design: stride-2 conv stack,
one stride-1 conv, and a 1-channel head with no sigmoid (least-squares
objective).
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .data import ImageTensor
from .errors import ConfigError, ShapeError

CHECKPOINT_MAGIC = "UWNET-CKPT-1"
INIT_STD = 0.02


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 3
    out_channels: int = 4
    num_blocks_per_side: int = 5
    layers_per_block: int = 5
    growth: int = 16
    stem_filters: int = 48
    backbone_id: str = "densenet"

    def __post_init__(self):
        if self.in_channels not in (3, 4) or self.out_channels not in (3, 4):
            raise ValueError(
                f"in/out channels must be 3 or 4, got {self.in_channels}->{self.out_channels}"
            )
        if self.num_blocks_per_side < 1:
            raise ValueError(f"num_blocks_per_side must be >= 1, got {self.num_blocks_per_side}")
        if self.growth < 1 or self.layers_per_block < 1 or self.stem_filters < 1:
            raise ValueError("growth, layers_per_block and stem_filters must be >= 1")

    @property
    def spatial_divisor(self) -> int:
        return 2 ** self.num_blocks_per_side


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int = 3
    base_filters: int = 64
    num_downsampling_layers: int = 3
    normalize: bool = True

    def __post_init__(self):
        if self.in_channels not in (3, 4):
            raise ValueError(f"discriminator in_channels must be 3 or 4, got {self.in_channels}")
        if self.base_filters < 1 or self.num_downsampling_layers < 1:
            raise ValueError("base_filters and num_downsampling_layers must be >= 1")


@dataclass
class NetworkParams:
    """One network's module plus its spec and role within the cycle."""

    module: nn.Module
    spec: GeneratorSpec | DiscriminatorSpec
    role_tag: str  # "G", "F", "D_X" or "D_Y"

    def named_parameters(self):
        return self.module.named_parameters()

    def parameters(self):
        return self.module.parameters()

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def all_finite(self) -> bool:
        return all(torch.isfinite(p).all() for p in self.module.parameters())


class DenseLayer(nn.Module):
    """norm -> silu -> 3x3 conv producing ``growth`` new feature maps.

    SiLU keeps the whole objective smooth, which the finite-difference
    gradient validation of the composite loss relies on.
    """

    def __init__(self, in_channels: int, growth: int):
        super().__init__()
        self.norm = nn.InstanceNorm2d(in_channels)
        self.act = nn.SiLU()
        self.conv = nn.Conv2d(in_channels, growth, kernel_size=3, padding=1)

    def forward(self, x):
        # instance norm is degenerate (and rejected by torch) on 1x1 maps,
        # which legally occur when input dims equal the spatial divisor
        h = self.norm(x) if x.shape[2] * x.shape[3] > 1 else x
        return self.conv(self.act(h))


class DenseBlock(nn.Module):
    """Each layer sees the concatenation of the block input and all earlier outputs."""

    def __init__(self, in_channels: int, num_layers: int, growth: int):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = in_channels + num_layers * growth
        self.layers = nn.ModuleList(
            DenseLayer(in_channels + i * growth, growth) for i in range(num_layers)
        )

    def forward(self, x):
        features = [x]
        for layer in self.layers:
            features.append(layer(torch.cat(features, dim=1)))
        out = torch.cat(features, dim=1)
        assert out.shape[1] == self.out_channels
        return out


class TransitionDown(nn.Module):
    """norm -> silu -> 1x1 conv -> 2x2 average pool."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.InstanceNorm2d(channels)
        self.act = nn.SiLU()
        self.conv = nn.Conv2d(channels, channels, kernel_size=1)
        self.pool = nn.AvgPool2d(2)

    def forward(self, x):
        h = self.norm(x) if x.shape[2] * x.shape[3] > 1 else x
        return self.pool(self.conv(self.act(h)))


class TransitionUp(nn.Module):
    """Strided transposed conv doubling spatial dims, compressing to ``out_channels``."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(
            in_channels, out_channels, kernel_size=3, stride=2, padding=1, output_padding=1
        )

    def forward(self, x):
        return self.deconv(x)


class DenseAutoencoder(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        g, layers = spec.growth, spec.layers_per_block
        block_growth = layers * g

        self.stem = nn.Conv2d(spec.in_channels, spec.stem_filters, kernel_size=3, padding=1)
        channels = spec.stem_filters

        self.down_blocks = nn.ModuleList()
        self.down_transitions = nn.ModuleList()
        skip_channels = []
        for _ in range(spec.num_blocks_per_side):
            block = DenseBlock(channels, layers, g)
            self.down_blocks.append(block)
            skip_channels.append(block.out_channels)
            self.down_transitions.append(TransitionDown(block.out_channels))
            channels = block.out_channels

        self.bottleneck = DenseBlock(channels, layers, g)
        channels = self.bottleneck.out_channels

        self.up_transitions = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for skip in reversed(skip_channels):
            self.up_transitions.append(TransitionUp(channels, block_growth))
            block = DenseBlock(block_growth + skip, layers, g)
            self.up_blocks.append(block)
            channels = block.out_channels

        self.head = nn.Conv2d(channels, spec.out_channels, kernel_size=1)

    def forward(self, x):
        divisor = self.spec.spatial_divisor
        h, w = x.shape[2], x.shape[3]
        if h % divisor or w % divisor:
            raise ShapeError(
                f"spatial dims {h}x{w} must be divisible by {divisor} "
                f"(2^{self.spec.num_blocks_per_side} downsamplings)"
            )
        out = self.stem(x)
        skips = []
        for block, trans in zip(self.down_blocks, self.down_transitions):
            out = block(out)
            skips.append(out)
            out = trans(out)
        out = self.bottleneck(out)
        for trans, block, skip in zip(self.up_transitions, self.up_blocks, reversed(skips)):
            out = trans(out)
            out = block(torch.cat([out, skip], dim=1))
        return torch.tanh(self.head(out))


class PatchDiscriminator(nn.Module):
    """Conv stack scoring overlapping receptive-field patches (70x70 at defaults)."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        layers = [
            nn.Conv2d(spec.in_channels, spec.base_filters, kernel_size=4, stride=2, padding=1),
            nn.SiLU(),
        ]
        filters = spec.base_filters
        for i in range(1, spec.num_downsampling_layers):
            prev, filters = filters, min(spec.base_filters * 2 ** i, spec.base_filters * 8)
            layers.append(nn.Conv2d(prev, filters, kernel_size=4, stride=2, padding=1))
            if spec.normalize:
                layers.append(nn.InstanceNorm2d(filters))
            layers.append(nn.SiLU())
        prev = filters
        filters = min(filters * 2, spec.base_filters * 8)
        layers.append(nn.Conv2d(prev, filters, kernel_size=4, stride=1, padding=1))
        if spec.normalize:
            layers.append(nn.InstanceNorm2d(filters))
        layers.append(nn.SiLU())
        layers.append(nn.Conv2d(filters, 1, kernel_size=4, stride=1, padding=1))
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"discriminator expects {self.spec.in_channels} channels, got {x.shape[1]}"
            )
        return self.layers(x)


def init_weights(module: nn.Module, seed_or_gen: int | torch.Generator) -> None:
    """Zero-mean Gaussian (std 0.02) conv weights, zero biases, deterministically."""
    gen = seed_or_gen if isinstance(seed_or_gen, torch.Generator) else torch.Generator().manual_seed(
        int(seed_or_gen)
    )
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.normal_(0.0, INIT_STD, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()


def _build_densenet(spec: GeneratorSpec) -> nn.Module:
    return DenseAutoencoder(spec)


def _build_unet(spec: GeneratorSpec) -> nn.Module:
    raise NotImplementedError("the 'unet' backbone is registered but not implemented")


def _build_resnet(spec: GeneratorSpec) -> nn.Module:
    raise NotImplementedError("the 'resnet' backbone is registered but not implemented")


BACKBONE_REGISTRY = {
    "densenet": _build_densenet,
    "unet": _build_unet,
    "resnet": _build_resnet,
}


def registry_get_backbone(backbone_id: str):
    """Look up a generator builder; unknown ids list what is registered."""
    try:
        return BACKBONE_REGISTRY[backbone_id]
    except KeyError:
        known = ", ".join(sorted(BACKBONE_REGISTRY))
        raise ConfigError(f"unknown generator backbone {backbone_id!r} (registered: {known})") from None


def build_generator(
    spec: GeneratorSpec, rng: int | torch.Generator = 0, role_tag: str = "G"
) -> NetworkParams:
    builder = registry_get_backbone(spec.backbone_id)
    module = builder(spec)
    init_weights(module, rng)
    return NetworkParams(module=module, spec=spec, role_tag=role_tag)


def build_discriminator(
    spec: DiscriminatorSpec, rng: int | torch.Generator = 0, role_tag: str = "D_X"
) -> NetworkParams:
    module = PatchDiscriminator(spec)
    init_weights(module, rng)
    return NetworkParams(module=module, spec=spec, role_tag=role_tag)


def _as_nchw(x) -> tuple[torch.Tensor, bool]:
    if isinstance(x, ImageTensor):
        return x.to_torch(), True
    return x, False


def forward_generator(params: NetworkParams, x):
    """Run a generator; accepts and returns ImageTensor or NCHW torch tensor."""
    t, was_image = _as_nchw(x)
    if t.shape[1] != params.spec.in_channels:
        raise ShapeError(f"generator expects {params.spec.in_channels} channels, got {t.shape[1]}")
    out = params.module(t)
    if was_image:
        return ImageTensor.from_torch(out, range_spec=(-1.0, 1.0))
    return out


def forward_discriminator(params: NetworkParams, x):
    """Run a discriminator; returns an unbounded 1-channel score map."""
    t, was_image = _as_nchw(x)
    out = params.module(t)
    if was_image:
        return ImageTensor.from_torch(out, range_spec=(-float("inf"), float("inf")))
    return out


def _spec_to_payload(spec) -> dict:
    kind = "generator" if isinstance(spec, GeneratorSpec) else "discriminator"
    return {"kind": kind, **asdict(spec)}


def _spec_from_payload(payload: dict):
    payload = dict(payload)
    kind = payload.pop("kind")
    if kind == "generator":
        return GeneratorSpec(**payload)
    if kind == "discriminator":
        return DiscriminatorSpec(**payload)
    raise ConfigError(f"unknown spec kind {kind!r} in checkpoint")


def save_checkpoint(
    path: str | Path,
    networks: dict[str, NetworkParams],
    step: int,
    optimizer_state: dict | None = None,
    extra: dict | None = None,
) -> Path:
    """Write a versioned checkpoint atomically (write to temp, then rename)."""
    path = Path(path)
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "step": int(step),
        "specs": {role: _spec_to_payload(net.spec) for role, net in networks.items()},
        "model_state": {role: net.module.state_dict() for role, net in networks.items()},
        "optimizer_state": optimizer_state,
        "extra": extra or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    """Read and validate a checkpoint payload."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise ConfigError(
            f"bad checkpoint magic in {path}: expected {CHECKPOINT_MAGIC!r}, "
            f"got {payload.get('magic') if isinstance(payload, dict) else type(payload).__name__!r}"
        )
    return payload


def restore_networks(payload: dict) -> tuple[dict[str, NetworkParams], int]:
    """Rebuild all networks stored in a checkpoint payload."""
    networks = {}
    for role, spec_payload in payload["specs"].items():
        spec = _spec_from_payload(spec_payload)
        if isinstance(spec, GeneratorSpec):
            net = build_generator(spec, rng=0, role_tag=role)
        else:
            net = build_discriminator(spec, rng=0, role_tag=role)
        try:
            net.module.load_state_dict(payload["model_state"][role])
        except (KeyError, RuntimeError) as exc:
            raise ConfigError(f"checkpoint state for {role} does not match its spec: {exc}") from exc
        networks[role] = net
    return networks, int(payload["step"])

"""Adversarial optimization of the two generators and two discriminators.

One step = a joint ADAM update of G and F on the total generator loss,
followed by one ADAM update of D_X and one of D_Y on the least-squares
discriminator objective, fed from history pools of past fakes. All
randomness (batch sampling, pool decisions) flows from one seeded generator,
so single-worker runs are bit-reproducible and resumable.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import CorpusIndex, make_unpaired_batch
from .errors import NumericalError
from .losses import CycleBundle, LossWeights, lsgan_d_loss, total_generator_loss
from .models import (
    DiscriminatorSpec,
    GeneratorSpec,
    NetworkParams,
    build_discriminator,
    build_generator,
    load_checkpoint,
    restore_networks,
    save_checkpoint,
)

log = logging.getLogger(__name__)

LOSS_CSV_FIELDS = ["step", "l_cyc", "l_gan", "l_ssim", "l_grad", "l_total", "d_x", "d_y"]


@dataclass
class TrainConfig:
    epochs: int = 400
    learning_rate: float = 1e-4
    batch_size: int = 1
    patch_size: int = 128
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    pool_size: int = 50
    checkpoint_interval: int = 1000
    adam_betas: tuple[float, float] = (0.5, 0.999)
    d_max: float = 10.0
    depth_scale: float = 1e-3
    image_size: int | None = None
    generator_spec: GeneratorSpec = field(default_factory=GeneratorSpec)
    disc_base_filters: int = 64
    disc_layers: int = 3

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.patch_size < 1:
            raise ValueError("batch_size and patch_size must be >= 1")
        if self.pool_size < 0:
            raise ValueError(f"pool_size must be >= 0, got {self.pool_size}")


class HistoryPool:
    """Buffer of past generated images used to stabilize discriminator updates.

    Below capacity every fresh fake is stored and returned. At capacity, each
    query returns the fresh fake with probability 0.5, otherwise swaps it
    against a random stored one and returns the stale fake.
    """

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.buffer: list[torch.Tensor] = []

    def query(self, fresh_fake: torch.Tensor) -> torch.Tensor:
        if self.capacity == 0:
            return fresh_fake
        out = []
        for i in range(fresh_fake.shape[0]):
            img = fresh_fake[i : i + 1].detach()
            if len(self.buffer) < self.capacity:
                self.buffer.append(img.clone())
                out.append(img)
            elif self.rng.random() < 0.5:
                out.append(img)
            else:
                j = int(self.rng.integers(self.capacity))
                out.append(self.buffer[j])
                self.buffer[j] = img.clone()
        return torch.cat(out, dim=0)

    def state_dict(self) -> dict:
        return {"capacity": self.capacity, "buffer": [t.clone() for t in self.buffer]}

    def load_state_dict(self, state: dict) -> None:
        self.capacity = int(state["capacity"])
        self.buffer = [t.clone() for t in state["buffer"]]


def pool_query(pool: HistoryPool, fresh_fake: torch.Tensor) -> torch.Tensor:
    return pool.query(fresh_fake)


class TrainState:
    """Networks, optimizers, pools, rng streams and the step counter of one run."""

    def __init__(self, config: TrainConfig):
        self.config = config
        torch.manual_seed(config.seed)
        gen_init = torch.Generator().manual_seed(config.seed)
        g_spec = config.generator_spec
        f_spec = GeneratorSpec(
            in_channels=g_spec.out_channels,
            out_channels=g_spec.in_channels,
            num_blocks_per_side=g_spec.num_blocks_per_side,
            layers_per_block=g_spec.layers_per_block,
            growth=g_spec.growth,
            stem_filters=g_spec.stem_filters,
            backbone_id=g_spec.backbone_id,
        )
        dx_spec = DiscriminatorSpec(
            in_channels=g_spec.in_channels,
            base_filters=config.disc_base_filters,
            num_downsampling_layers=config.disc_layers,
        )
        dy_spec = DiscriminatorSpec(
            in_channels=g_spec.out_channels,
            base_filters=config.disc_base_filters,
            num_downsampling_layers=config.disc_layers,
        )
        self.nets: dict[str, NetworkParams] = {
            "G": build_generator(g_spec, gen_init, role_tag="G"),
            "F": build_generator(f_spec, gen_init, role_tag="F"),
            "D_X": build_discriminator(dx_spec, gen_init, role_tag="D_X"),
            "D_Y": build_discriminator(dy_spec, gen_init, role_tag="D_Y"),
        }
        self.optimizers = self._make_optimizers()
        self.rng = np.random.default_rng(config.seed)
        self.pool_x = HistoryPool(config.pool_size, self.rng)
        self.pool_y = HistoryPool(config.pool_size, self.rng)
        self.step = 0

    def _make_optimizers(self) -> dict[str, torch.optim.Adam]:
        cfg = self.config
        gen_params = list(self.nets["G"].parameters()) + list(self.nets["F"].parameters())
        return {
            "G": torch.optim.Adam(gen_params, lr=cfg.learning_rate, betas=cfg.adam_betas),
            "D_X": torch.optim.Adam(
                self.nets["D_X"].parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas
            ),
            "D_Y": torch.optim.Adam(
                self.nets["D_Y"].parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas
            ),
        }

    def checkpoint_payload_extra(self) -> dict:
        return {
            "numpy_rng_state": self.rng.bit_generator.state,
            "torch_rng_state": torch.get_rng_state(),
            "pool_x": self.pool_x.state_dict(),
            "pool_y": self.pool_y.state_dict(),
            "config": _config_to_json(self.config),
        }

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(
            path,
            self.nets,
            self.step,
            optimizer_state={k: opt.state_dict() for k, opt in self.optimizers.items()},
            extra=self.checkpoint_payload_extra(),
        )

    @classmethod
    def restore(cls, path: str | Path, config: TrainConfig | None = None) -> "TrainState":
        payload = load_checkpoint(path)
        if config is None:
            config = _config_from_json(payload["extra"]["config"])
        state = cls(config)
        nets, step = restore_networks(payload)
        state.nets = nets
        state.optimizers = state._make_optimizers()
        if payload.get("optimizer_state"):
            for k, opt in state.optimizers.items():
                opt.load_state_dict(payload["optimizer_state"][k])
        extra = payload.get("extra", {})
        if "numpy_rng_state" in extra:
            state.rng.bit_generator.state = extra["numpy_rng_state"]
        if "torch_rng_state" in extra:
            torch.set_rng_state(extra["torch_rng_state"])
        if "pool_x" in extra:
            state.pool_x.load_state_dict(extra["pool_x"])
            state.pool_y.load_state_dict(extra["pool_y"])
        state.step = step
        return state


def _config_to_json(config: TrainConfig) -> dict:
    d = asdict(config)
    d["generator_spec"] = asdict(config.generator_spec)
    d["weights"] = asdict(config.weights)
    return d


def _config_from_json(d: dict) -> TrainConfig:
    d = dict(d)
    d["generator_spec"] = GeneratorSpec(**d["generator_spec"])
    d["weights"] = LossWeights(**d["weights"])
    d["adam_betas"] = tuple(d["adam_betas"])
    return TrainConfig(**d)


def _check_finite(breakdown: dict, step: int) -> None:
    bad = {k: v for k, v in breakdown.items() if not np.isfinite(v)}
    if bad:
        raise NumericalError(f"non-finite loss at step {step}: {bad}")


def train_step(state: TrainState, x: torch.Tensor, y: torch.Tensor) -> dict:
    """One optimization step; returns the per-term loss breakdown."""
    nets, opts, cfg = state.nets, state.optimizers, state.config
    g, f = nets["G"].module, nets["F"].module
    d_x, d_y = nets["D_X"].module, nets["D_Y"].module

    # generators
    g_x = g(x)
    f_g_x = f(g_x)
    f_y = f(y)
    g_f_y = g(f_y)
    bundle = CycleBundle(x=x, g_x=g_x, f_g_x=f_g_x, y=y, f_y=f_y, g_f_y=g_f_y)
    total, breakdown = total_generator_loss(bundle, d_y(g_x), d_x(f_y), cfg.weights)
    _check_finite(breakdown, state.step)
    opts["G"].zero_grad(set_to_none=True)
    total.backward()
    opts["G"].step()

    # discriminators, fed through the history pools
    fake_x = state.pool_x.query(f_y.detach())
    loss_d_x = lsgan_d_loss(d_x(x), d_x(fake_x))
    opts["D_X"].zero_grad(set_to_none=True)
    loss_d_x.backward()
    opts["D_X"].step()

    fake_y = state.pool_y.query(g_x.detach())
    loss_d_y = lsgan_d_loss(d_y(y), d_y(fake_y))
    opts["D_Y"].zero_grad(set_to_none=True)
    loss_d_y.backward()
    opts["D_Y"].step()

    breakdown["d_x"] = float(loss_d_x.detach())
    breakdown["d_y"] = float(loss_d_y.detach())
    _check_finite(breakdown, state.step)
    state.step += 1
    breakdown["step"] = state.step
    return breakdown


def steps_per_epoch(uw: CorpusIndex, aerial: CorpusIndex, batch_size: int) -> int:
    return max(1, max(len(uw), len(aerial)) // batch_size)


def fit(
    uw: CorpusIndex,
    aerial: CorpusIndex,
    config: TrainConfig,
    run_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> Path:
    """Run the training loop; returns the final checkpoint path.

    Checkpoints are written atomically every ``checkpoint_interval`` steps and
    at the end; ``resume`` restores networks, optimizers, rng streams, pools
    and the step counter so a continued run matches an uninterrupted one.
    """
    if run_dir is None:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = Path("runs") / f"{stamp}-seed{config.seed}"
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        state = TrainState.restore(resume, config)
    else:
        state = TrainState(config)

    per_epoch = steps_per_epoch(uw, aerial, config.batch_size)
    target_steps = config.epochs * per_epoch
    ckpt_path = run_dir / "checkpoint.pt"
    csv_path = run_dir / "loss_log.csv"
    new_csv = not (resume is not None and csv_path.exists())
    csv_file = open(csv_path, "w" if new_csv else "a", newline="")
    writer = csv.DictWriter(csv_file, fieldnames=LOSS_CSV_FIELDS)
    if new_csv:
        writer.writeheader()

    try:
        while state.step < target_steps:
            x, y = make_unpaired_batch(
                uw,
                aerial,
                config.batch_size,
                config.patch_size,
                state.rng,
                d_max=config.d_max,
                depth_scale=config.depth_scale,
                image_size=config.image_size,
            )
            breakdown = train_step(state, x.to_torch(), y.to_torch())
            writer.writerow({k: breakdown[k] for k in LOSS_CSV_FIELDS})
            if state.step % 50 == 0 or state.step == target_steps:
                csv_file.flush()
                log.info(
                    "step %d/%d total %.4f (cyc %.4f gan %.4f ssim %.4f grad %.4f)",
                    state.step,
                    target_steps,
                    breakdown["l_total"],
                    breakdown["l_cyc"],
                    breakdown["l_gan"],
                    breakdown["l_ssim"],
                    breakdown["l_grad"],
                )
            if config.checkpoint_interval > 0 and state.step % config.checkpoint_interval == 0:
                state.save(ckpt_path)
        state.save(ckpt_path)
    finally:
        csv_file.close()
    return ckpt_path

import hashlib

import numpy as np
import pytest
import torch

from uwdepth.data import make_unpaired_batch
from uwdepth.errors import NumericalError
from uwdepth.losses import LossWeights
from uwdepth.models import GeneratorSpec
from uwdepth.training import (
    HistoryPool,
    TrainConfig,
    TrainState,
    fit,
    pool_query,
    train_step,
)

TINY_SPEC = GeneratorSpec(num_blocks_per_side=1, layers_per_block=2, growth=4, stem_filters=8)


def tiny_config(**overrides):
    defaults = dict(
        epochs=1,
        learning_rate=1e-4,
        batch_size=1,
        patch_size=32,
        weights=LossWeights(),
        seed=0,
        pool_size=4,
        checkpoint_interval=0,
        d_max=5.0,
        generator_spec=TINY_SPEC,
        disc_base_filters=8,
        disc_layers=1,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def _rand_batch(seed=0, size=32):
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 3, size, size, generator=gen) * 2 - 1
    y = torch.rand(1, 4, size, size, generator=gen) * 2 - 1
    return x, y


def _param_hash(module):
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


class TestHistoryPool:
    def test_zero_capacity_always_fresh(self):
        pool = HistoryPool(0, np.random.default_rng(0))
        fresh = torch.rand(1, 3, 4, 4)
        assert pool_query(pool, fresh) is fresh
        assert pool.buffer == []

    def test_first_insert_returns_fresh(self):
        pool = HistoryPool(4, np.random.default_rng(0))
        fresh = torch.rand(1, 3, 4, 4)
        out = pool.query(fresh)
        assert torch.equal(out, fresh)
        assert len(pool.buffer) == 1

    def test_below_capacity_always_stores_and_returns_fresh(self):
        pool = HistoryPool(8, np.random.default_rng(0))
        for i in range(8):
            fresh = torch.full((1, 1, 2, 2), float(i))
            out = pool.query(fresh)
            assert torch.equal(out, fresh)
        assert len(pool.buffer) == 8

    def test_stale_fraction_converges_to_half(self):
        pool = HistoryPool(50, np.random.default_rng(123))
        stale = 0
        total = 10_000
        for i in range(total):
            fresh = torch.full((1, 1, 1, 1), float(i))
            out = pool.query(fresh)
            if not torch.equal(out, fresh):
                stale += 1
        assert abs(stale / total - 0.5) <= 0.02

    def test_state_dict_round_trip(self):
        pool = HistoryPool(3, np.random.default_rng(1))
        for i in range(5):
            pool.query(torch.full((1, 1, 2, 2), float(i)))
        snapshot = pool.state_dict()
        other = HistoryPool(0, np.random.default_rng(2))
        other.load_state_dict(snapshot)
        assert other.capacity == 3
        assert all(torch.equal(a, b) for a, b in zip(other.buffer, pool.buffer))


class TestTrainStep:
    def test_zero_lr_leaves_parameters_unchanged(self):
        state = TrainState(tiny_config(learning_rate=0.0))
        before = {role: _param_hash(net.module) for role, net in state.nets.items()}
        x, y = _rand_batch()
        train_step(state, x, y)
        after = {role: _param_hash(net.module) for role, net in state.nets.items()}
        assert before == after

    def test_losses_finite_and_step_increments(self):
        state = TrainState(tiny_config())
        x, y = _rand_batch(1)
        breakdown = train_step(state, x, y)
        for key in ("l_cyc", "l_gan", "l_ssim", "l_grad", "l_total", "d_x", "d_y"):
            assert np.isfinite(breakdown[key])
        assert state.step == 1 and breakdown["step"] == 1

    def test_same_seed_identical_loss_traces(self):
        traces = []
        for _ in range(2):
            state = TrainState(tiny_config(seed=3))
            trace = []
            for i in range(5):
                x, y = _rand_batch(i + 10)
                trace.append(train_step(state, x, y)["l_total"])
            traces.append(trace)
        assert traces[0] == traces[1]

    def test_generator_update_does_not_touch_discriminators_and_vice_versa(self):
        state = TrainState(tiny_config())
        x, y = _rand_batch(2)

        # run the generator half manually, then check D hashes
        d_hashes = {r: _param_hash(state.nets[r].module) for r in ("D_X", "D_Y")}
        g_hashes = {r: _param_hash(state.nets[r].module) for r in ("G", "F")}
        train_step(state, x, y)
        # after a full step, both must have changed (nonzero lr) but the
        # sub-step isolation is what matters: re-run with lr=0 on D opts
        assert _param_hash(state.nets["G"].module) != g_hashes["G"]
        assert _param_hash(state.nets["D_X"].module) != d_hashes["D_X"]

        state2 = TrainState(tiny_config())
        x2, y2 = _rand_batch(2)
        for group in state2.optimizers["D_X"].param_groups:
            group["lr"] = 0.0
        for group in state2.optimizers["D_Y"].param_groups:
            group["lr"] = 0.0
        d_before = {r: _param_hash(state2.nets[r].module) for r in ("D_X", "D_Y")}
        train_step(state2, x2, y2)
        d_after = {r: _param_hash(state2.nets[r].module) for r in ("D_X", "D_Y")}
        assert d_before == d_after  # generator update never modified D params

        state3 = TrainState(tiny_config())
        x3, y3 = _rand_batch(2)
        for group in state3.optimizers["G"].param_groups:
            group["lr"] = 0.0
        g_before = {r: _param_hash(state3.nets[r].module) for r in ("G", "F")}
        train_step(state3, x3, y3)
        g_after = {r: _param_hash(state3.nets[r].module) for r in ("G", "F")}
        assert g_before == g_after  # discriminator updates never modified G/F

    def test_parameters_stay_finite_over_steps(self):
        state = TrainState(tiny_config(learning_rate=1e-3))
        for i in range(10):
            x, y = _rand_batch(i)
            train_step(state, x, y)
        assert all(net.all_finite() for net in state.nets.values())

    def test_non_finite_loss_raises_numerical_error(self):
        state = TrainState(tiny_config())
        with torch.no_grad():
            head = state.nets["G"].module.head
            head.weight.fill_(float("nan"))
        x, y = _rand_batch(4)
        with pytest.raises(NumericalError, match="step"):
            train_step(state, x, y)


class TestFit(object):
    def test_epoch_step_arithmetic(self, tmp_path, training_indexes):
        uw, aerial = training_indexes
        uw4 = type(uw)(uw.root_path, uw.entries[:4], uw.domain_tag)
        aerial4 = type(aerial)(aerial.root_path, aerial.entries[:4], aerial.domain_tag)
        cfg = tiny_config()
        ckpt = fit(uw4, aerial4, cfg, run_dir=tmp_path / "run")
        state = TrainState.restore(ckpt)
        assert state.step == 4  # 1 epoch x 4 images / batch 1

        rows = (tmp_path / "run" / "loss_log.csv").read_text().strip().splitlines()
        assert rows[0].startswith("step,")
        assert len(rows) == 1 + 4

    def test_resume_continues_step_counter(self, tmp_path, training_indexes):
        uw, aerial = training_indexes
        uw4 = type(uw)(uw.root_path, uw.entries[:4], uw.domain_tag)
        aerial4 = type(aerial)(aerial.root_path, aerial.entries[:4], aerial.domain_tag)
        ckpt = fit(uw4, aerial4, tiny_config(), run_dir=tmp_path / "run1")
        cfg2 = tiny_config(epochs=2)
        ckpt2 = fit(uw4, aerial4, cfg2, run_dir=tmp_path / "run2", resume=ckpt)
        state = TrainState.restore(ckpt2)
        assert state.step == 8

    def test_resumed_run_matches_uninterrupted(self, tmp_path, training_indexes):
        uw, aerial = training_indexes
        uw4 = type(uw)(uw.root_path, uw.entries[:4], uw.domain_tag)
        aerial4 = type(aerial)(aerial.root_path, aerial.entries[:4], aerial.domain_tag)

        # uninterrupted: 2 epochs in one go
        ckpt_a = fit(uw4, aerial4, tiny_config(epochs=2, seed=9), run_dir=tmp_path / "a")
        # interrupted: 1 epoch, checkpoint, resume for the second
        ckpt_b1 = fit(uw4, aerial4, tiny_config(epochs=1, seed=9), run_dir=tmp_path / "b1")
        ckpt_b = fit(
            uw4, aerial4, tiny_config(epochs=2, seed=9), run_dir=tmp_path / "b2", resume=ckpt_b1
        )
        sa = TrainState.restore(ckpt_a)
        sb = TrainState.restore(ckpt_b)
        for role in ("G", "F", "D_X", "D_Y"):
            for (name, pa), (_, pb) in zip(
                sa.nets[role].named_parameters(), sb.nets[role].named_parameters()
            ):
                assert torch.equal(pa, pb), f"{role}.{name} diverged after resume"

    def test_checkpoint_save_load_save_identical(self, tmp_path, training_indexes):
        uw, aerial = training_indexes
        uw2 = type(uw)(uw.root_path, uw.entries[:2], uw.domain_tag)
        aerial2 = type(aerial)(aerial.root_path, aerial.entries[:2], aerial.domain_tag)
        ckpt = fit(uw2, aerial2, tiny_config(), run_dir=tmp_path / "run")
        state = TrainState.restore(ckpt)
        resaved = state.save(tmp_path / "resaved.pt")
        a = TrainState.restore(ckpt)
        b = TrainState.restore(resaved)
        for role in ("G", "F", "D_X", "D_Y"):
            for (_, pa), (_, pb) in zip(
                a.nets[role].named_parameters(), b.nets[role].named_parameters()
            ):
                assert torch.equal(pa, pb)


class TestMakeBatchIntegration:
    def test_batch_feeds_train_step(self, training_indexes):
        uw, aerial = training_indexes
        state = TrainState(tiny_config())
        x, y = make_unpaired_batch(uw, aerial, 1, 32, state.rng, d_max=5.0)
        breakdown = train_step(state, x.to_torch(), y.to_torch())
        assert np.isfinite(breakdown["l_total"])

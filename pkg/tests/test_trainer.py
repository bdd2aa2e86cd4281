import dataclasses
import math

import numpy as np
import pytest
import torch

from graphdepth.checkpoint import CheckpointError, load_checkpoint, named_parameters, restore
from graphdepth.trainer import (TOY_TRAIN, TrainConfig, Trainer, build_models, format_log_line,
                                lr_at, parse_log_line, train_step)


def config(**kw):
    return dataclasses.replace(TOY_TRAIN, **kw)


def snapshot(trainer):
    return {n: p.detach().clone() for n, p in named_parameters(trainer.depth_net, trainer.pose_net)}


def test_lr_schedule_boundaries():
    c = TrainConfig()
    assert lr_at(0, 1000, c) == 1e-4
    assert lr_at(749, 1000, c) == 1e-4
    assert lr_at(750, 1000, c) == 5e-5
    assert lr_at(999, 1000, c) == 5e-5
    with pytest.raises(ValueError):
        lr_at(1000, 1000, c)
    # 0.7 * 10 is 7.000000000000001 in floating point
    assert lr_at(7, 10, TrainConfig(lr_drop_fraction=0.7)) == 5e-5


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(lr=-1.0), dict(lr_drop_fraction=1.0),
                                 dict(arch="vgg"), dict(P=2.0), dict(scale_mode="LS"),
                                 dict(gcn_activation="tanh"), dict(height=100)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_zero_lr_leaves_parameters_untouched(synth_train):
    tr = Trainer(config(), synth_train)
    before = snapshot(tr)
    train_step(tr.load_batch(0, 0), tr.depth_net, tr.pose_net, tr.optimizer, 0.0, tr.loss_config)
    after = snapshot(tr)
    assert all(torch.equal(before[n], after[n]) for n in before)


def test_two_steps_descend(synth_train):
    wins = 0
    for seed in range(10):
        tr = Trainer(config(seed=seed), synth_train)
        batch = tr.load_batch(0, 0)
        first = train_step(batch, tr.depth_net, tr.pose_net, tr.optimizer, tr.config.lr,
                           tr.loss_config)
        second = train_step(batch, tr.depth_net, tr.pose_net, tr.optimizer, tr.config.lr,
                            tr.loss_config)
        wins += float(second.l_final) < float(first.l_final)
    assert wins >= 9


def test_non_finite_loss_aborts_before_update(synth_train):
    tr = Trainer(config(), synth_train)
    batch = tr.load_batch(0, 0)
    before = snapshot(tr)
    broken = dataclasses.replace(tr.loss_config, alpha=float("inf"))
    with pytest.raises(FloatingPointError, match="l_smooth"):
        train_step(batch, tr.depth_net, tr.pose_net, tr.optimizer, 1e-2, broken)
    after = snapshot(tr)
    assert all(torch.equal(before[n], after[n]) for n in before)


def test_log_line_round_trip():
    losses = {"l_rec": 0.1, "l_pl": 0.25, "l_dis": 3.0, "l_cvt": 1.5, "l_smooth": 0.0045,
              "l_final": 0.3545}
    line = format_log_line(2, 17, losses, 1e-4)
    assert line.startswith("epoch=2\tstep=17\tl_rec=0.1\t")
    back = parse_log_line(line)
    assert back == {"epoch": 2.0, "step": 17.0, **losses, "lr": 1e-4}


def test_same_seed_same_trajectory(synth_train):
    runs = []
    for _ in range(2):
        tr = Trainer(config(), synth_train)
        runs.append([tr.step(tr.load_batch(0, s)).as_dict() for s in range(3)])
    assert runs[0] == runs[1]


def test_epoch_order_is_seeded(synth_train):
    a = Trainer(config(seed=1), synth_train)
    assert np.array_equal(a.epoch_order(0), a.epoch_order(0))
    assert not np.array_equal(a.epoch_order(0), a.epoch_order(1))
    assert sorted(a.epoch_order(3)) == list(range(len(synth_train)))


def test_checkpoint_round_trip(tmp_path, synth_train):
    tr = Trainer(config(), synth_train)
    tr.step(tr.load_batch(0, 0))
    path = tr.save(tmp_path / "c.npz")
    depth, pose = build_models(config(seed=5))
    restore(load_checkpoint(path), depth, pose)
    for (n, p), (_, q) in zip(named_parameters(tr.depth_net, tr.pose_net),
                              named_parameters(depth, pose)):
        assert torch.equal(p, q), n
    for a, b in zip(tr.depth_net.buffers(), depth.buffers()):
        assert torch.equal(a, b)


def test_checkpoint_rejects_other_architecture(tmp_path, synth_train):
    tr = Trainer(config(), synth_train)
    path = tr.save(tmp_path / "c.npz")
    depth, pose = build_models(config(scale_mode="SS"))
    with pytest.raises(CheckpointError, match="mismatch"):
        restore(load_checkpoint(path), depth, pose)
    other = Trainer(config(scale_mode="SS"), synth_train)
    with pytest.raises(ValueError, match="scale_mode"):
        other.resume(path)


def test_resume_continues_bit_exactly(tmp_path, synth_train):
    tr = Trainer(config(), synth_train)
    for s in range(2):
        tr.step(tr.load_batch(0, s))
    path = tr.save(tmp_path / "mid.npz")
    expected = tr.step(tr.load_batch(0, 2)).as_dict()

    again = Trainer(config(), synth_train)
    again.resume(path)
    assert again.iteration == 2
    assert again.step(again.load_batch(0, 2)).as_dict() == expected


def test_fit_writes_checkpoints_and_log(tmp_path, synth_train):
    tr = Trainer(config(epochs=2), synth_train, out_dir=tmp_path)
    best = tr.fit()
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names == ["best.npz", "epoch_001.npz", "epoch_002.npz", "last.npz"]
    assert best == tmp_path / "checkpoints" / "best.npz"
    lines = (tmp_path / "train.log").read_text().splitlines()
    assert len(lines) == 2 * len(synth_train)
    assert [int(parse_log_line(line)["step"]) for line in lines] == list(range(len(lines)))
    assert math.isfinite(tr.best_val)


def test_interrupted_fit_leaves_loadable_checkpoint(tmp_path, synth_train):
    def stop(trainer, losses):
        if trainer.iteration == len(synth_train) + 3:
            raise KeyboardInterrupt

    tr = Trainer(config(epochs=3), synth_train, out_dir=tmp_path)
    with pytest.raises(KeyboardInterrupt):
        tr.fit(stop)
    ckpt = load_checkpoint(tmp_path / "checkpoints" / "last.npz")
    assert ckpt.meta["epoch"] == 1 and ckpt.meta["iteration"] == len(synth_train)
    assert not list((tmp_path / "checkpoints").glob("*.tmp"))

    resumed = Trainer(config(epochs=3), synth_train, out_dir=tmp_path)
    resumed.resume(tmp_path / "checkpoints" / "last.npz")
    resumed.fit()
    assert resumed.iteration == 3 * len(synth_train)

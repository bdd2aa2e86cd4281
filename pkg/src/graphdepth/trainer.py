"""Joint optimisation of the depth and pose networks."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, named_parameters, restore, save_checkpoint
from .data import Batch, TripletDataset, augment, collate
from .depthnet import DepthNet, DepthNetConfig, TOY_DEPTH
from .encoder import RESNET50
from .geometry import RigidTransform, pose_to_transform
from .losses import LossBreakdown, LossConfig, total_loss
from .posenet import PoseNet, PoseNetConfig, TOY_POSENET

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 10
    lr: float = 1e-4
    lr_drop_fraction: float = 0.75
    lr_drop_factor: float = 0.5
    seed: int = 0
    P: float = 0.7
    scale_mode: str = "MS"
    gcn_activation: str = "log_softmax"
    lam: float = 0.5
    alpha: float = 1e-3
    beta: float = 1e-3
    row_normalize: bool = False
    arch: str = "resnet"  # "resnet" (ResNet-50 / ResNet-18) or "toy"
    height: int = 320
    width: int = 1024
    augment: bool = True
    grad_clip: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        for name in ("epochs", "batch_size", "height", "width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not 0 < self.lr_drop_fraction < 1:
            raise ValueError(f"lr_drop_fraction must lie in (0, 1), got {self.lr_drop_fraction}")
        if self.lr_drop_factor <= 0:
            raise ValueError(f"lr_drop_factor must be positive, got {self.lr_drop_factor}")
        if self.arch not in ("resnet", "toy"):
            raise ValueError(f"arch must be 'resnet' or 'toy', got {self.arch!r}")
        self.depth_config()  # validates P, scale_mode, activation and size

    def depth_config(self) -> DepthNetConfig:
        base = TOY_DEPTH if self.arch == "toy" else DepthNetConfig(encoder=RESNET50)
        return dataclasses.replace(base, input_size=(self.height, self.width), P=self.P,
                                   scale_mode=self.scale_mode, gcn_activation=self.gcn_activation,
                                   row_normalize=self.row_normalize)

    def pose_config(self) -> PoseNetConfig:
        return TOY_POSENET if self.arch == "toy" else PoseNetConfig()

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, alpha=self.alpha, beta=self.beta)


# desk-scale settings for the synthetic overfit run
TOY_TRAIN = TrainConfig(epochs=5, batch_size=1, lr=1e-2, lr_drop_fraction=0.5, lr_drop_factor=0.3,
                        row_normalize=True, arch="toy", height=64, width=64, augment=False)


def lr_at(iteration: int, total_iterations: int, config: TrainConfig) -> float:
    """Step schedule: the base rate, dropped once ``lr_drop_fraction`` of training is done."""
    if not 0 <= iteration < total_iterations:
        raise ValueError(f"iteration {iteration} outside [0, {total_iterations})")
    # round() guards against fractions like 0.7 * 10 = 7.000000000000001
    drop_at = math.ceil(round(config.lr_drop_fraction * total_iterations, 9))
    return config.lr if iteration < drop_at else config.lr * config.lr_drop_factor


def build_models(config: TrainConfig) -> tuple[DepthNet, PoseNet]:
    """Networks initialised deterministically from ``config.seed``."""
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        depth_net = DepthNet(config.depth_config(), seed=config.seed)
        pose_net = PoseNet(config.pose_config())
    return depth_net, pose_net


def make_optimizer(depth_net, pose_net, lr: float) -> torch.optim.Adam:
    params = [p for _, p in named_parameters(depth_net, pose_net)]
    return torch.optim.Adam(params, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def source_transforms(pose_net, batch: Batch) -> list[RigidTransform]:
    """Target-to-source motion for frames t-1 and t+1.

    Both pairs go to the pose network in temporal order, so each call
    predicts the same forward motion; the t-1 estimate is then inverted.
    """
    prev, nxt = batch.sources
    return [pose_to_transform(pose_net(prev, batch.target), invert=True),
            pose_to_transform(pose_net(batch.target, nxt))]


def forward_losses(batch: Batch, depth_net, pose_net, loss_config: LossConfig) -> LossBreakdown:
    disps = depth_net(batch.target)
    return total_loss(disps, batch.target, batch.sources, source_transforms(pose_net, batch),
                      batch.K, loss_config)


def train_step(batch: Batch, depth_net, pose_net, optimizer, lr: float,
               loss_config: LossConfig | None = None, grad_clip: float = 0.0) -> LossBreakdown:
    """One Adam update of both networks; raises before updating if any loss term is non-finite."""
    depth_net.train()
    pose_net.train()
    for group in optimizer.param_groups:
        group["lr"] = lr
    losses = forward_losses(batch, depth_net, pose_net, loss_config or LossConfig())
    losses.check_finite()
    optimizer.zero_grad(set_to_none=True)
    losses.l_final.backward()
    if grad_clip > 0:
        params = [p for g in optimizer.param_groups for p in g["params"]]
        torch.nn.utils.clip_grad_norm_(params, grad_clip)
    optimizer.step()
    return _detached(losses)


def _detached(losses: LossBreakdown) -> LossBreakdown:
    return LossBreakdown(*(getattr(losses, n).detach() for n in LossBreakdown.TERMS),
                         per_scale=[_detached(s) for s in losses.per_scale])


def format_log_line(epoch: int, step: int, losses: dict[str, float], lr: float) -> str:
    fields = {"epoch": epoch, "step": step, **losses, "lr": lr}
    return "\t".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in fields.items())


def parse_log_line(line: str) -> dict[str, float]:
    out = {}
    for item in line.rstrip("\n").split("\t"):
        key, _, value = item.partition("=")
        out[key] = float(value)
    return out


class Trainer:
    """Owns both networks, the optimiser and the iteration counters."""

    def __init__(self, config: TrainConfig, train_set: TripletDataset,
                 val_set: TripletDataset | None = None, out_dir=None):
        if len(train_set) == 0:
            raise ValueError("training set is empty")
        self.config = config
        self.train_set = train_set
        self.val_set = val_set
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.depth_net, self.pose_net = build_models(config)
        self.optimizer = make_optimizer(self.depth_net, self.pose_net, config.lr)
        self.loss_config = config.loss_config()
        self.steps_per_epoch = math.ceil(len(train_set) / config.batch_size)
        self.total_iterations = config.epochs * self.steps_per_epoch
        self.iteration = 0
        self.epoch = 0
        self.best_val = math.inf
        self.history: list[dict[str, float]] = []
        self.grad_seen: set[str] = set()

    # ------------------------------------------------------------------
    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.config.seed, epoch]).permutation(len(self.train_set))

    def load_batch(self, epoch: int, step: int) -> Batch:
        order = self.epoch_order(epoch)
        bs = self.config.batch_size
        items = []
        for index in order[step * bs:(step + 1) * bs]:
            triplet = self.train_set[int(index)]
            if self.config.augment:
                rng = np.random.default_rng([self.config.seed, epoch, int(index)])
                triplet = augment(triplet, rng)
            items.append(triplet)
        return collate(items)

    def step(self, batch: Batch) -> LossBreakdown:
        lr = lr_at(self.iteration, self.total_iterations, self.config)
        losses = train_step(batch, self.depth_net, self.pose_net, self.optimizer, lr,
                            self.loss_config, self.config.grad_clip)
        for name, p in named_parameters(self.depth_net, self.pose_net):
            if p.grad is not None and name not in self.grad_seen and bool((p.grad != 0).any()):
                self.grad_seen.add(name)
        record = {"epoch": self.epoch, "step": self.iteration, **losses.as_dict(), "lr": lr}
        self.history.append(record)
        line = format_log_line(self.epoch, self.iteration, losses.as_dict(), lr)
        log.info(line)
        if self.out_dir is not None:
            with open(self.out_dir / "train.log", "a") as fh:
                fh.write(line + "\n")
        self.iteration += 1
        return losses

    @torch.no_grad()
    def validation_loss(self) -> float:
        dataset = self.val_set if self.val_set is not None else self.train_set
        self.depth_net.eval()
        self.pose_net.eval()
        total, count = 0.0, 0
        bs = self.config.batch_size
        for start in range(0, len(dataset), bs):
            items = [dataset[i] for i in range(start, min(start + bs, len(dataset)))]
            losses = forward_losses(collate(items), self.depth_net, self.pose_net, self.loss_config)
            total += float(losses.l_final) * len(items)
            count += len(items)
        return total / count

    # ------------------------------------------------------------------
    def meta(self) -> dict:
        return {"iteration": self.iteration, "epoch": self.epoch, "best_val": self.best_val,
                "config": dataclasses.asdict(self.config)}

    def save(self, path) -> Path:
        return save_checkpoint(path, self.depth_net, self.pose_net, self.optimizer, self.meta())

    def resume(self, path) -> None:
        ckpt = load_checkpoint(path)
        saved = ckpt.meta.get("config", {})
        for key in ("arch", "height", "width", "scale_mode"):
            if key in saved and saved[key] != getattr(self.config, key):
                raise ValueError(f"checkpoint {key}={saved[key]!r} differs from config "
                                 f"{getattr(self.config, key)!r}")
        restore(ckpt, self.depth_net, self.pose_net, self.optimizer)
        self.iteration = int(ckpt.meta["iteration"])
        self.epoch = int(ckpt.meta["epoch"])
        self.best_val = float(ckpt.meta.get("best_val", math.inf))

    def fit(self, callback=None) -> Path | None:
        """Train until ``config.epochs``; returns the best checkpoint path.

        Checkpoints go to ``out_dir/checkpoints`` after every epoch
        (``epoch_XXX.npz``, ``last.npz``, ``best.npz``). ``callback(trainer,
        losses)`` runs after every step.
        """
        ckpt_dir = None
        if self.out_dir is not None:
            ckpt_dir = self.out_dir / "checkpoints"
            ckpt_dir.mkdir(parents=True, exist_ok=True)
        while self.epoch < self.config.epochs:
            start = time.perf_counter()
            first = self.iteration - self.epoch * self.steps_per_epoch
            for s in range(first, self.steps_per_epoch):
                losses = self.step(self.load_batch(self.epoch, s))
                if callback is not None:
                    callback(self, losses)
            val = self.validation_loss()
            self.epoch += 1
            improved = val < self.best_val
            if improved:
                self.best_val = val
            log.info("epoch=%d\tval_l_final=%r\tseconds=%.1f", self.epoch, val,
                     time.perf_counter() - start)
            if ckpt_dir is not None:
                self.save(ckpt_dir / f"epoch_{self.epoch:03d}.npz")
                self.save(ckpt_dir / "last.npz")
                if improved:
                    self.save(ckpt_dir / "best.npz")
        return ckpt_dir / "best.npz" if ckpt_dir is not None else None


def fit(config: TrainConfig, train_set: TripletDataset, val_set: TripletDataset | None = None,
        out_dir=None, resume_from=None, callback=None) -> Path | None:
    trainer = Trainer(config, train_set, val_set, out_dir)
    if resume_from is not None:
        trainer.resume(resume_from)
    return trainer.fit(callback)

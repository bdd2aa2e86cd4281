"""Command-line entry point: ``graphdepth {train,eval,infer}``.

Exit status is 0 on success, 1 on a runtime failure and 2 for invalid
configuration or arguments. Configuration files are INI text::

    [train]
    epochs = 20
    P = 0.7

    [data]
    root = data/kitti
    train_split = splits/eigen_zhou/train_files.txt

Relative split paths are resolved against ``data.root``.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import metrics
from .checkpoint import CheckpointError, load_checkpoint
from .data import (SplitError, TripletDataset, load_depth_png, load_eval_sample, load_image,
                   load_split, make3d_ids, save_depth_png)
from .depthnet import DepthNet
from .geometry import disp_to_depth
from .trainer import TrainConfig, Trainer

log = logging.getLogger("graphdepth")

DATASETS = ("kitti", "make3d")
CROPS = ("none", "garg")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    root: str = ""
    train_split: str = ""
    val_split: str = ""
    test_split: str = ""


@dataclass
class EvalConfig:
    dataset: str = "kitti"
    max_depth: float = 0.0  # 0 picks the dataset cap (80 m KITTI, 70 m Make3D)
    median_scaling: bool = True
    crop: str = ""  # empty picks the dataset default (none for KITTI, central for Make3D)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out: str = "runs/default"
    explicit: frozenset = frozenset()  # "section.key" names set by the file or flags

    SECTIONS = ("train", "data", "eval", "run")

    def split_path(self, name: str) -> Path | None:
        value = getattr(self.data, name)
        if not value:
            return None
        path = Path(value)
        return path if path.is_absolute() else Path(self.data.root) / path


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            value = raw.strip().lower()
            if value in ("1", "true", "yes", "on"):
                return True
            if value in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as "
                          f"{type(default).__name__}") from None
    return raw.strip()


def _apply(obj, section: str, items: dict[str, str]):
    names = {f.name: f for f in dataclasses.fields(obj)}
    updates = {}
    for key, raw in items.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        updates[key] = _convert(section, key, raw, getattr(obj, key))
    return dataclasses.replace(obj, **updates)


def load_config(path=None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Parse and validate a config file; ``overrides`` (section -> key -> text) win."""
    sections: dict[str, dict[str, str]] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keys are case-sensitive (``P``)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for name in parser.sections():
            if name not in RunConfig.SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
            sections[name] = dict(parser.items(name))
    for name, items in (overrides or {}).items():
        sections.setdefault(name, {}).update(items)

    run = sections.get("run", {})
    unknown = set(run) - {"out"}
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in section [run]")
    try:
        # TrainConfig validates its own values on construction
        config = RunConfig(train=_apply(TrainConfig(), "train", sections.get("train", {})),
                           data=_apply(DataConfig(), "data", sections.get("data", {})),
                           eval=_apply(EvalConfig(), "eval", sections.get("eval", {})),
                           out=run.get("out", RunConfig.out),
                           explicit=frozenset(f"{sec}.{key}" for sec, items in sections.items()
                                              for key in items))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if config.eval.dataset not in DATASETS:
        raise ConfigError(f"[eval] dataset must be one of {DATASETS}, got {config.eval.dataset!r}")
    if config.eval.crop not in ("",) + CROPS:
        raise ConfigError(f"[eval] crop must be one of {CROPS}, got {config.eval.crop!r}")
    return config


def write_config(path, config: RunConfig) -> Path:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in ("train", "data", "eval"):
        parser[name] = {k: str(v) for k, v in dataclasses.asdict(getattr(config, name)).items()}
    parser["run"] = {"out": config.out}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        parser.write(fh)
    return path


# ----------------------------------------------------------------------
def _overrides(args, mapping: dict[str, tuple[str, str]]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for attr, (section, key) in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out.setdefault(section, {})[key] = str(value)
    return out


_TRAIN_FLAGS = {"P": ("train", "P"), "seed": ("train", "seed"), "out": ("run", "out"),
                "epochs": ("train", "epochs"), "lr": ("train", "lr"),
                "batch_size": ("train", "batch_size"), "data_root": ("data", "root")}


def cmd_train(args) -> int:
    config = load_config(args.config, _overrides(args, _TRAIN_FLAGS))
    train_split = config.split_path("train_split")
    if train_split is None:
        raise ConfigError("[data] train_split is required for training")
    size = (config.train.width, config.train.height)
    try:
        train_set = TripletDataset.from_split(config.data.root, train_split, "train", size)
        val_path = config.split_path("val_split")
        val_set = TripletDataset.from_split(config.data.root, val_path, "val", size) \
            if val_path is not None else None
    except (SplitError, FileNotFoundError) as exc:
        raise ConfigError(str(exc)) from exc

    out = Path(config.out)
    write_config(out / "checkpoints" / "config.ini", config)
    trainer = Trainer(config.train, train_set, val_set, out)
    if args.resume:
        trainer.resume(args.resume)
    best = trainer.fit()
    print(f"best checkpoint: {best}")
    return 0


def _net_from_checkpoint(path, config: RunConfig | None = None) -> tuple[DepthNet, TrainConfig]:
    try:
        ckpt = load_checkpoint(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from exc
    saved = ckpt.meta.get("config")
    if saved is None:
        raise ConfigError(f"checkpoint {path} carries no config snapshot")
    train_config = TrainConfig(**saved)
    if config is not None:
        for key in ("arch", "height", "width", "scale_mode"):
            want = getattr(config.train, key)
            if f"train.{key}" in config.explicit and saved.get(key, want) != want:
                raise ConfigError(f"checkpoint {key}={saved[key]!r} does not match config "
                                  f"{key}={want!r}")
    net = DepthNet(train_config.depth_config())
    state = ckpt.section("depth")
    own = net.state_dict()
    if set(state) != set(own) or any(state[k].shape != own[k].shape for k in own):
        raise ConfigError(f"checkpoint {path} does not match the {train_config.arch} architecture")
    net.load_state_dict(state)
    net.eval()
    return net, train_config


def prediction_path(pred_dir, sample_id: str) -> Path:
    """Where the evaluation hook looks for a precomputed depth map of ``sample_id``."""
    path = Path(pred_dir) / sample_id
    return path if path.suffix == ".png" else path.with_name(path.name + ".png")


def _eval_ids(config: RunConfig, dataset: str) -> list[str]:
    root = Path(config.data.root)
    if dataset == "make3d":
        if not (root / "Gridlaserdata").is_dir():
            raise ConfigError(f"no ground-truth directory {root / 'Gridlaserdata'}")
        ids = make3d_ids(root)
        if not ids:
            raise ConfigError(f"no Make3D test images under {root / 'Test134'}")
        return ids
    split = config.split_path("test_split")
    if split is None:
        raise ConfigError("[data] test_split is required for KITTI evaluation")
    try:
        return load_split(root, split, "test")
    except (SplitError, FileNotFoundError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_eval(args) -> int:
    flags = {"dataset": ("eval", "dataset"), "max_depth": ("eval", "max_depth"),
             "crop": ("eval", "crop"), "data_root": ("data", "root"),
             "split": ("data", "test_split"), "out": ("run", "out")}
    overrides = _overrides(args, flags)
    if args.no_median_scaling:
        overrides.setdefault("eval", {})["median_scaling"] = "false"
    config = load_config(args.config, overrides)
    if args.checkpoint is None and args.predictions is None:
        raise ConfigError("eval needs a checkpoint or --predictions")
    dataset = config.eval.dataset
    ids = _eval_ids(config, dataset)
    net = train_config = None
    if args.predictions is None:
        net, train_config = _net_from_checkpoint(args.checkpoint, config)

    if dataset == "kitti":
        cap = config.eval.max_depth or metrics.KITTI_MAX_DEPTH
        crop = config.eval.crop or "none"
        score = metrics.evaluate
    else:
        cap = config.eval.max_depth or metrics.MAKE3D_MAX_DEPTH
        crop = {"": "make3d", "none": None, "garg": "garg"}[config.eval.crop]
        score = metrics.evaluate_make3d
    size = None if net is None else (train_config.width, train_config.height)

    records = {}
    for sample_id in ids:
        try:
            sample = load_eval_sample(config.data.root, sample_id, dataset, size)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from exc
        if net is None:
            pred_file = prediction_path(args.predictions, sample_id)
            if not pred_file.exists():
                raise ConfigError(f"no prediction for {sample_id}: {pred_file}")
            depth = load_depth_png(pred_file)
        else:
            with torch.no_grad():
                disp = net(sample.image[None])[-1]
                disp = F.interpolate(disp, size=sample.gt_depth.shape, mode="bilinear",
                                     align_corners=False)
            depth = disp_to_depth(disp[0, 0]).numpy()
        records[sample_id] = score(depth, sample.gt_depth, max_depth=cap,
                                   scale=config.eval.median_scaling, crop=crop)

    aggregate = metrics.mean_metrics(list(records.values()))
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    report = metrics.write_report(out / f"metrics_{dataset}.txt", records, aggregate)
    names = [f.name for f in dataclasses.fields(aggregate)]
    print("  ".join(f"{n:>8s}" for n in names))
    print(aggregate.row())
    log.info("report written to %s", report)
    return 0


def colorize(disp: np.ndarray, colormap: str = "magma") -> np.ndarray:
    """8-bit RGB rendering of a disparity map normalised by its 95th percentile."""
    from matplotlib import colormaps

    disp = np.asarray(disp, dtype=np.float64)
    top = np.percentile(disp, 95)
    scaled = np.clip(disp / top, 0.0, 1.0) if top > 0 else np.zeros_like(disp)
    rgba = colormaps[colormap](scaled)
    return np.round(rgba[..., :3] * 255).astype(np.uint8)


def _atomic_save(path: Path, image: Image.Image) -> None:
    tmp = path.with_name(path.name + ".tmp")
    image.save(tmp, format="PNG")
    os.replace(tmp, path)


def cmd_infer(args) -> int:
    net, train_config = _net_from_checkpoint(args.checkpoint)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return 1
    for image_path in args.images:
        image_path = Path(image_path)
        try:
            image, (w0, h0) = load_image(image_path, (train_config.width, train_config.height))
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
        with torch.no_grad():
            disp = net(image[None])[-1]
            disp = F.interpolate(disp, size=(h0, w0), mode="bilinear", align_corners=False)[0, 0]
        depth = disp_to_depth(disp).numpy()
        stem = image_path.stem
        depth_file = out / f"{stem}_depth.png"
        tmp = depth_file.with_name(depth_file.name + ".tmp.png")
        save_depth_png(tmp, depth)
        os.replace(tmp, depth_file)
        _atomic_save(out / f"{stem}_disp.png", Image.fromarray(colorize(disp.numpy(), args.colormap)))
        print(f"{image_path} -> {depth_file.name}, {stem}_disp.png")
    return 0


# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="graphdepth", description=__doc__.split("\n")[0],
                                     formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every training step")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--config", help="INI configuration file", default=None)
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        p.add_argument("--out", default=None, help="output directory (overrides run.out)")

    p = sub.add_parser("train", help="train depth and pose networks", formatter_class=fmt)
    shared(p)
    p.add_argument("--P", type=float, default=None, help="override train.P (edge threshold)")
    p.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    p.add_argument("--lr", type=float, default=None, help="override train.lr")
    p.add_argument("--batch-size", type=int, default=None, help="override train.batch_size")
    p.add_argument("--data-root", default=None, help="override data.root")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate depth against ground truth", formatter_class=fmt)
    shared(p)
    p.add_argument("checkpoint", nargs="?", default=None, help="checkpoint archive (.npz)")
    p.add_argument("--dataset", choices=DATASETS, default=None, help="override eval.dataset")
    p.add_argument("--max-depth", type=float, default=None,
                   help="depth cap in metres (default: 80 KITTI, 70 Make3D)")
    p.add_argument("--no-median-scaling", action="store_true", help="skip median scaling")
    p.add_argument("--crop", choices=CROPS, default=None,
                   help="evaluation crop (default: none for KITTI, central 2:1 for Make3D)")
    p.add_argument("--data-root", default=None, help="override data.root")
    p.add_argument("--split", default=None, help="override data.test_split")
    p.add_argument("--predictions", default=None,
                   help="directory of precomputed 16-bit depth maps to score instead of a network")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="write depth maps and disparity renderings",
                       formatter_class=fmt)
    p.add_argument("checkpoint", help="checkpoint archive (.npz)")
    p.add_argument("images", nargs="+", help="input images")
    p.add_argument("--out", default="predictions", help="output directory")
    p.add_argument("--colormap", default="magma", help="matplotlib colormap for disparity")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

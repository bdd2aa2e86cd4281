"""Depth evaluation: error and threshold-accuracy metrics with median scaling."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

KITTI_MAX_DEPTH = 80.0
MAKE3D_MAX_DEPTH = 70.0
MIN_DEPTH = 1e-3


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float  # percent
    delta2: float
    delta3: float

    def row(self) -> str:
        return "  ".join(f"{v:8.4f}" for v in astuple_floats(self))


@dataclass(frozen=True)
class Make3DMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    log10: float

    def row(self) -> str:
        return "  ".join(f"{v:8.4f}" for v in astuple_floats(self))


def astuple_floats(m) -> tuple[float, ...]:
    return tuple(float(getattr(m, f.name)) for f in fields(m))


def median_scale(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """``pred * median(gt) / median(pred)`` over the valid pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.ones(gt.shape, bool) if valid is None else np.asarray(valid, bool)
    if not valid.any():
        raise ValueError("median scaling needs at least one valid pixel")
    med_pred = np.median(pred[valid])
    if med_pred == 0:
        raise ValueError("median of the prediction is zero; cannot scale")
    return pred * (np.median(gt[valid]) / med_pred)


def garg_crop_mask(shape: tuple[int, int]) -> np.ndarray:
    """Crop box of Garg et al. used in most KITTI comparisons."""
    h, w = shape
    mask = np.zeros(shape, bool)
    mask[int(0.40810811 * h):int(0.99189189 * h), int(0.03594771 * w):int(0.96405229 * w)] = True
    return mask


def make3d_crop_mask(shape: tuple[int, int]) -> np.ndarray:
    """Central 2:1 (width:height) crop."""
    h, w = shape
    ch = min(h, w // 2)
    top = (h - ch) // 2
    mask = np.zeros(shape, bool)
    mask[top:top + ch, :] = True
    return mask


def _valid_pixels(pred, gt, min_depth, max_depth, scale, crop):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from ground truth {gt.shape}")
    valid = (gt > min_depth) & (gt < max_depth)
    if crop == "garg":
        valid &= garg_crop_mask(gt.shape)
    elif crop == "make3d":
        valid &= make3d_crop_mask(gt.shape)
    elif crop not in (None, "none"):
        raise ValueError(f"unknown crop {crop!r}")
    if not valid.any():
        raise ValueError("no ground-truth pixel inside the depth range")
    if scale:
        pred = median_scale(pred, gt, valid)
    pred = np.clip(pred[valid], min_depth, max_depth)
    return pred, gt[valid]


def evaluate(pred, gt, min_depth: float = MIN_DEPTH, max_depth: float = KITTI_MAX_DEPTH,
             scale: bool = True, crop: str | None = None) -> DepthMetrics:
    """Error metrics over ground-truth pixels in ``(min_depth, max_depth)``."""
    pred, gt = _valid_pixels(pred, gt, min_depth, max_depth, scale, crop)
    thresh = np.maximum(gt / pred, pred / gt)
    sq = (gt - pred) ** 2
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(gt - pred) / gt)),
        sq_rel=float(np.mean(sq / gt)),
        rmse=float(np.sqrt(sq.mean())),
        rmse_log=float(np.sqrt(np.mean(np.log(gt / pred) ** 2))),
        delta1=float(np.mean(thresh < 1.25) * 100),
        delta2=float(np.mean(thresh < 1.25 ** 2) * 100),
        delta3=float(np.mean(thresh < 1.25 ** 3) * 100),
    )


def evaluate_make3d(pred, gt, min_depth: float = MIN_DEPTH, max_depth: float = MAKE3D_MAX_DEPTH,
                    scale: bool = True, crop: str | None = "make3d") -> Make3DMetrics:
    pred, gt = _valid_pixels(pred, gt, min_depth, max_depth, scale, crop)
    sq = (gt - pred) ** 2
    return Make3DMetrics(
        abs_rel=float(np.mean(np.abs(gt - pred) / gt)),
        sq_rel=float(np.mean(sq / gt)),
        rmse=float(np.sqrt(sq.mean())),
        log10=float(np.mean(np.abs(np.log10(gt) - np.log10(pred)))),
    )


def mean_metrics(records: list):
    """Per-field mean, reduced in list order."""
    if not records:
        raise ValueError("no records to average")
    cls = type(records[0])
    return cls(*(float(np.mean([getattr(r, f.name) for r in records])) for f in fields(cls)))


def write_report(path, records: dict[str, object], aggregate=None) -> Path:
    """One ``[image <id>]`` block per record and a final ``[aggregate]`` block of key=value lines."""
    path = Path(path)
    aggregate = aggregate if aggregate is not None else mean_metrics(list(records.values()))
    lines = []
    for sample_id, m in records.items():
        lines.append(f"[image {sample_id}]")
        lines += [f"{k}={v!r}" for k, v in asdict(m).items()]
        lines.append("")
    lines.append("[aggregate]")
    lines += [f"{k}={v!r}" for k, v in asdict(aggregate).items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_report(path) -> dict[str, dict[str, float]]:
    """Parse a report back into ``{section: {field: value}}``."""
    out: dict[str, dict[str, float]] = {}
    section = None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            out[section] = {}
        else:
            key, _, value = line.partition("=")
            out[section][key] = float(value)
    return out

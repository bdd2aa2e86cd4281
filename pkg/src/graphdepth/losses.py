"""Self-supervised training objective.

All pixel sums are realised as means so the terms do not depend on image size.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .geometry import RigidTransform, disp_to_depth, pose_to_transform, synthesize_view

L1_WEIGHT = 0.15
SSIM_WEIGHT = 0.85
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# stands in for "no valid source" when taking the per-pixel minimum
_INVALID_ERROR = 1e3


class EmptyMaskWarning(UserWarning):
    pass


@dataclass
class LossBreakdown:
    l_rec: torch.Tensor
    l_pl: torch.Tensor
    l_dis: torch.Tensor
    l_cvt: torch.Tensor
    l_smooth: torch.Tensor
    l_final: torch.Tensor
    per_scale: list["LossBreakdown"] = field(default_factory=list)

    TERMS = ("l_rec", "l_pl", "l_dis", "l_cvt", "l_smooth", "l_final")

    def as_dict(self) -> dict[str, float]:
        return {name: float(getattr(self, name).detach()) for name in self.TERMS}

    def check_finite(self) -> None:
        for name in self.TERMS:
            if not bool(torch.isfinite(getattr(self, name)).all()):
                raise FloatingPointError(f"non-finite loss term {name}")


def _masked_mean(x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    """Mean of ``B x C x H x W`` ``x`` over pixels where ``mask`` (``B x 1 x H x W``) is set."""
    if mask is None:
        return x.mean()
    mask = mask.to(x.dtype)
    count = mask.sum() * x.shape[1]
    if float(count) == 0:
        warnings.warn("empty mask, loss defined as 0", EmptyMaskWarning, stacklevel=3)
        return x.sum() * 0.0
    return (x * mask).sum() / count


def reconstruction_loss(rec: torch.Tensor, target: torch.Tensor,
                        mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean absolute error over (masked) pixels and channels."""
    if rec.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(rec.shape)} vs {tuple(target.shape)}")
    return _masked_mean((rec - target).abs(), mask)


def ssim(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Per-pixel SSIM over 3x3 windows with reflection padding."""
    x = F.pad(x, (1, 1, 1, 1), mode="reflect")
    y = F.pad(y, (1, 1, 1, 1), mode="reflect")
    mu_x = F.avg_pool2d(x, 3, 1)
    mu_y = F.avg_pool2d(y, 3, 1)
    sigma_x = F.avg_pool2d(x * x, 3, 1) - mu_x ** 2
    sigma_y = F.avg_pool2d(y * y, 3, 1) - mu_y ** 2
    sigma_xy = F.avg_pool2d(x * y, 3, 1) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sigma_xy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return num / den


def photometric_error(rec: torch.Tensor, target: torch.Tensor,
                      use_ssim: bool = True) -> torch.Tensor:
    """Per-pixel ``0.15 |rec - target| + 0.85 (1 - SSIM) / 2``, averaged over channels."""
    l1 = (rec - target).abs().mean(1, keepdim=True)
    if not use_ssim:
        return L1_WEIGHT * l1
    dssim = ((1 - ssim(rec, target)) / 2).mean(1, keepdim=True)
    return L1_WEIGHT * l1 + SSIM_WEIGHT * dssim


def photometric_loss(rec: torch.Tensor, target: torch.Tensor, mask: torch.Tensor | None = None,
                     use_ssim: bool = True) -> torch.Tensor:
    """Masked mean of :func:`photometric_error`.

    ``use_ssim=False`` drops the SSIM term, leaving exactly ``0.15 * L1``.
    """
    if rec.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(rec.shape)} vs {tuple(target.shape)}")
    return _masked_mean(photometric_error(rec, target, use_ssim), mask)


def _diff(x: torch.Tensor, order: int, dim: int) -> torch.Tensor:
    return torch.diff(x, n=order, dim=dim)


def _edge_aware(d: torch.Tensor, image: torch.Tensor, order: int, lam: float) -> torch.Tensor:
    total = d.new_zeros(())
    for dim in (-1, -2):
        if d.shape[dim] <= order:
            continue
        grad_d = _diff(d, order, dim).abs()
        grad_i = _diff(image, order, dim).abs().mean(1, keepdim=True)
        total = total + (torch.exp(-lam * grad_i) * grad_d).mean()
    return total


def smoothness_loss(disp: torch.Tensor, image: torch.Tensor, lam: float = 0.5,
                    alpha: float = 1e-3, beta: float = 1e-3):
    """Edge-aware first- and second-order smoothness of mean-normalised disparity.

    Returns ``(l_dis, l_cvt, l_smooth)``. ``image`` is resized to the
    disparity resolution when needed.
    """
    if image.shape[-2:] != disp.shape[-2:]:
        image = F.interpolate(image, size=disp.shape[-2:], mode="area")
    mean_disp = disp.mean((2, 3), keepdim=True)
    # sigmoid disparity is strictly positive; the clamp only guards degenerate input
    d = disp / mean_disp.clamp_min(torch.finfo(disp.dtype).tiny)
    l_dis = _edge_aware(d, image, 1, lam)
    l_cvt = _edge_aware(d, image, 2, lam)
    return l_dis, l_cvt, alpha * l_dis + beta * l_cvt


@dataclass
class LossConfig:
    lam: float = 0.5
    alpha: float = 1e-3
    beta: float = 1e-3
    min_depth: float = 0.1
    max_depth: float = 100.0
    scale_weights: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)


def total_loss(disps: list[torch.Tensor], target: torch.Tensor, sources: list[torch.Tensor],
               poses: list[torch.Tensor], K, config: LossConfig | None = None) -> LossBreakdown:
    """Full objective over a disparity pyramid.

    ``poses[k]`` (a pose vector or a ``RigidTransform``) maps target-camera
    points into ``sources[k]``'s camera. Each
    disparity level is upsampled to the target resolution before warping; the
    smoothness term uses the native level resolution.
    """
    config = config or LossConfig()
    if len(sources) != len(poses):
        raise ValueError("need one pose per source frame")
    if len(config.scale_weights) != len(disps):
        raise ValueError(f"{len(config.scale_weights)} scale weights for {len(disps)} scales")
    h, w = target.shape[-2:]
    transforms = [p if isinstance(p, RigidTransform) else pose_to_transform(p) for p in poses]
    per_scale = []
    for disp in disps:
        full = F.interpolate(disp, size=(h, w), mode="bilinear", align_corners=False)
        depth = disp_to_depth(full, config.min_depth, config.max_depth)
        errors, masks, recs = [], [], []
        for source, T in zip(sources, transforms):
            rec, mask = synthesize_view(source, depth, T, K)
            recs.append(reconstruction_loss(rec, target, mask))
            errors.append(torch.where(mask > 0, photometric_error(rec, target),
                                      torch.full_like(mask, _INVALID_ERROR)))
            masks.append(mask)
        best = torch.stack(errors).min(0).values
        any_valid = torch.stack(masks).amax(0)
        l_pl = _masked_mean(best, any_valid)
        l_rec = torch.stack(recs).mean()
        l_dis, l_cvt, l_smooth = smoothness_loss(disp, target, config.lam, config.alpha, config.beta)
        per_scale.append(LossBreakdown(l_rec, l_pl, l_dis, l_cvt, l_smooth, l_pl + l_rec + l_smooth))

    weights = config.scale_weights
    combined = {
        name: sum(wt * getattr(s, name) for wt, s in zip(weights, per_scale))
        for name in LossBreakdown.TERMS
    }
    return LossBreakdown(**combined, per_scale=per_scale)

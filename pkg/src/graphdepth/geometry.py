"""Camera geometry and differentiable inverse warping.

Images are ``B x C x H x W`` tensors. Pixel ``(u, v)`` is column ``u``, row
``v``, with integer coordinates at pixel centres.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

MIN_DEPTH = 0.1
MAX_DEPTH = 100.0

# sub-pixel slack for the in-frame test; absorbs round-off on border pixels
_EDGE_TOL = 1e-3


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def scaled(self, sx: float, sy: float | None = None) -> "CameraIntrinsics":
        """Intrinsics after resizing the image by ``sx`` (horizontal) and ``sy``."""
        sy = sx if sy is None else sy
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy)

    def matrix(self, dtype=torch.float32, device=None) -> torch.Tensor:
        return torch.tensor([[self.fx, 0.0, self.cx],
                             [0.0, self.fy, self.cy],
                             [0.0, 0.0, 1.0]], dtype=dtype, device=device)


@dataclass(frozen=True)
class RigidTransform:
    R: torch.Tensor  # (B, 3, 3)
    t: torch.Tensor  # (B, 3)

    def inverse(self) -> "RigidTransform":
        Rt = self.R.transpose(-1, -2)
        return RigidTransform(Rt, -(Rt @ self.t.unsqueeze(-1)).squeeze(-1))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self o other``: apply ``other`` first."""
        return RigidTransform(self.R @ other.R, (self.R @ other.t.unsqueeze(-1)).squeeze(-1) + self.t)

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        """Transform ``B x 3 x N`` points."""
        return self.R @ points + self.t.unsqueeze(-1)

    @classmethod
    def identity(cls, batch: int = 1, dtype=torch.float32, device=None) -> "RigidTransform":
        R = torch.eye(3, dtype=dtype, device=device).expand(batch, 3, 3).clone()
        return cls(R, torch.zeros(batch, 3, dtype=dtype, device=device))


def disp_to_depth(disp, min_depth: float = MIN_DEPTH, max_depth: float = MAX_DEPTH):
    """Map sigmoid disparity in (0, 1) to depth in (min_depth, max_depth)."""
    if min_depth >= max_depth:
        raise ValueError(f"min_depth ({min_depth}) must be below max_depth ({max_depth})")
    min_disp = 1.0 / max_depth
    max_disp = 1.0 / min_depth
    return 1.0 / (min_disp + (max_disp - min_disp) * disp)


def depth_to_disp(depth, min_depth: float = MIN_DEPTH, max_depth: float = MAX_DEPTH):
    """Inverse of :func:`disp_to_depth`."""
    if min_depth >= max_depth:
        raise ValueError(f"min_depth ({min_depth}) must be below max_depth ({max_depth})")
    min_disp = 1.0 / max_depth
    max_disp = 1.0 / min_depth
    return (1.0 / depth - min_disp) / (max_disp - min_disp)


def rodrigues(rotvec: torch.Tensor) -> torch.Tensor:
    """Axis-angle vectors ``(B, 3)`` to rotation matrices ``(B, 3, 3)``.

    Uses the Taylor expansions of ``sin(a)/a`` and ``(1 - cos(a))/a^2`` near
    zero so the gradient stays finite at the identity.
    """
    theta2 = (rotvec * rotvec).sum(-1, keepdim=True)
    small = theta2 < 1e-8
    safe2 = torch.where(small, torch.ones_like(theta2), theta2)
    theta = safe2.sqrt()
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / safe2)
    x, y, z = rotvec.unbind(-1)
    zero = torch.zeros_like(x)
    skew = torch.stack([zero, -z, y, z, zero, -x, -y, x, zero], -1).view(-1, 3, 3)
    eye = torch.eye(3, dtype=rotvec.dtype, device=rotvec.device).expand_as(skew)
    return eye + a.unsqueeze(-1) * skew + b.unsqueeze(-1) * (skew @ skew)


def pose_to_transform(pose: torch.Tensor, invert: bool = False) -> RigidTransform:
    """``(B, 6)`` pose ``[rx, ry, rz, tx, ty, tz]`` to a rigid transform."""
    if pose.dim() == 1:
        pose = pose.unsqueeze(0)
    T = RigidTransform(rodrigues(pose[:, :3]), pose[:, 3:])
    return T.inverse() if invert else T


def pixel_grid(height: int, width: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Homogeneous pixel coordinates ``3 x (H*W)``, row-major."""
    v, u = torch.meshgrid(torch.arange(height, dtype=dtype, device=device),
                          torch.arange(width, dtype=dtype, device=device), indexing="ij")
    return torch.stack([u.reshape(-1), v.reshape(-1), torch.ones(height * width, dtype=dtype,
                                                                  device=device)])


def intrinsics_matrix(K, batch: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """``B x 3 x 3`` matrices from a :class:`CameraIntrinsics` or a (batched) tensor."""
    if isinstance(K, CameraIntrinsics):
        return K.matrix(dtype, device).expand(batch, 3, 3)
    K = torch.as_tensor(K, dtype=dtype, device=device)
    return K.expand(batch, 3, 3) if K.dim() == 2 else K


def backproject(depth: torch.Tensor, K) -> torch.Tensor:
    """``B x 1 x H x W`` depth to camera-frame points ``B x 3 x (H*W)``."""
    b, _, h, w = depth.shape
    K_inv = torch.linalg.inv(intrinsics_matrix(K, b, depth.dtype, depth.device))
    rays = K_inv @ pixel_grid(h, w, depth.dtype, depth.device)
    return rays * depth.view(b, 1, -1)


def project(points: torch.Tensor, K, eps: float = 1e-7):
    """Camera-frame points ``B x 3 x N`` to pixel coords ``B x 2 x N`` and depth ``B x N``."""
    cam = intrinsics_matrix(K, points.shape[0], points.dtype, points.device) @ points
    z = cam[:, 2]
    safe = torch.where(z.abs() < eps, torch.full_like(z, eps), z)
    return cam[:, :2] / safe.unsqueeze(1), z


def synthesize_view(source: torch.Tensor, depth: torch.Tensor, transform: RigidTransform,
                    K) -> tuple[torch.Tensor, torch.Tensor]:
    """Reconstruct the target frame by sampling ``source``.

    ``depth`` is the target frame's depth and ``transform`` maps target-camera
    points into the source camera. Returns the reconstruction and a
    ``B x 1 x H x W`` validity mask (sample inside the frame, point in front
    of the source camera). Out-of-frame samples clamp to the border. ``K``
    is a :class:`CameraIntrinsics` or a ``(B x) 3 x 3`` tensor.
    """
    b, _, h, w = source.shape
    if depth.shape != (b, 1, h, w):
        raise ValueError(f"depth shape {tuple(depth.shape)} does not match source {tuple(source.shape)}")
    if bool((depth <= 0).any()):
        raise ValueError("depth must be strictly positive")
    # coordinates in double precision so round-off stays far below a pixel
    wide = torch.float64
    T = RigidTransform(transform.R.to(wide), transform.t.to(wide))
    K64 = K if isinstance(K, CameraIntrinsics) else torch.as_tensor(K).to(wide)
    points = T.apply(backproject(depth.to(wide), K64))
    pix, z = project(points, K64)
    u, v = pix[:, 0], pix[:, 1]
    tol = _EDGE_TOL
    valid = (u >= -tol) & (u <= w - 1 + tol) & (v >= -tol) & (v <= h - 1 + tol) & (z > 0)
    # align_corners=True maps -1/+1 onto the first/last pixel centres
    gx = 2.0 * u / max(w - 1, 1) - 1.0
    gy = 2.0 * v / max(h - 1, 1) - 1.0
    grid = torch.stack([gx, gy], -1).view(b, h, w, 2).to(source.dtype)
    rec = F.grid_sample(source, grid, mode="bilinear", padding_mode="border", align_corners=True)
    return rec, valid.view(b, 1, h, w).to(source.dtype)

"""Synthetic KITTI-layout sequences: textured planes seen by a translating camera.

    python -m graphdepth.synthetic --out data/synth --frames 12 --motion 0.05,0,0.3 \\
        --plane-depths 4 --seed 0

Two layouts are available. ``corridor`` (default) is a closed box whose end
wall sits at the last plane depth; nothing is ever occluded. ``planes`` puts
fronto-parallel rectangles in front of an unbounded background at the last
depth. Every sequence gets its own textures. Ground-truth depth is exact
(ray/plane intersection at pixel centres).
"""
from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import save_depth_png

DATE = "2011_01_01"


@dataclass
class Plane:
    """Axis-aligned textured rectangle ``X[axis] = offset``; unbounded extents are inf."""

    axis: int
    offset: float
    extent: tuple[tuple[float, float], tuple[float, float]]  # ranges of the two other axes
    freqs: np.ndarray  # (n, 2) cycles per metre in the in-plane coordinates
    phases: np.ndarray  # (n, 3)
    amps: np.ndarray  # (n, 3)
    base: np.ndarray  # (3,)

    def texture(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(self.base, a.shape + (3,)).copy()
        for f, ph, amp in zip(self.freqs, self.phases, self.amps):
            arg = 2 * np.pi * (f[0] * a + f[1] * b)
            out += amp * np.sin(arg[..., None] + ph)
        return np.clip(out, 0.0, 1.0)

    def contains(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        (a0, a1), (b0, b1) = self.extent
        return (a >= a0) & (a <= a1) & (b >= b0) & (b <= b1)


def intrinsics_for(width: int, height: int) -> tuple[float, float, float, float]:
    f = 0.58 * width
    return f, f, (width - 1) / 2, (height - 1) / 2


def _random_texture(rng, wavelength_m, n=4):
    wavelength = rng.uniform(*wavelength_m, n)
    angle = rng.uniform(0, np.pi, n)
    freqs = np.stack([np.cos(angle), np.sin(angle)], -1) / wavelength[:, None]
    return (freqs, rng.uniform(0, 2 * np.pi, (n, 3)), rng.uniform(0.05, 0.15, (n, 3)),
            rng.uniform(0.3, 0.7, 3))


def make_planes(depths, width: int, height: int, rng: np.random.Generator) -> list[Plane]:
    """Fronto-parallel rectangles at ``depths``; the last one is an unbounded background."""
    fx, fy, cx, cy = intrinsics_for(width, height)
    planes = []
    for k, z in enumerate(depths):
        if k == len(depths) - 1:
            extent = ((-np.inf, np.inf), (-np.inf, np.inf))
        else:
            # rectangle covering a random part of the first frame's view
            u0, u1 = np.sort(rng.uniform(0.05, 0.95, 2)) * width
            if u1 - u0 < 0.3 * width:
                u1 = min(u0 + 0.3 * width, width)
            v0, v1 = np.sort(rng.uniform(0.05, 0.95, 2)) * height
            if v1 - v0 < 0.3 * height:
                v1 = min(v0 + 0.3 * height, height)
            extent = (((u0 - cx) * z / fx, (u1 - cx) * z / fx),
                      ((v0 - cy) * z / fy, (v1 - cy) * z / fy))
        # 6-16 px on screen in the first frame
        wavelength_m = (6.0 * z / fx, 16.0 * z / fx)
        planes.append(Plane(2, float(z), extent, *_random_texture(rng, wavelength_m)))
    return planes


def make_corridor(depths, width: int, height: int, rng: np.random.Generator,
                  half_size: tuple[float, float] = (1.5, 1.0)) -> list[Plane]:
    """Closed box seen from inside: two side walls, floor, ceiling and an end wall.

    The end wall sits at the last of ``depths``. A camera inside a convex box
    never sees one surface occlude another.
    """
    far = float(depths[-1])
    hx, hy = half_size
    behind = -1e3
    walls = [(0, -hx, ((-hy, hy), (behind, far))), (0, hx, ((-hy, hy), (behind, far))),
             (1, -hy, ((-hx, hx), (behind, far))), (1, hy, ((-hx, hx), (behind, far))),
             (2, far, ((-hx, hx), (-hy, hy)))]
    return [Plane(axis, offset, extent, *_random_texture(rng, (0.5, 1.0)))
            for axis, offset, extent in walls]


def render(planes: list[Plane], position: np.ndarray, width: int, height: int,
           supersample: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Image (H x W x 3 in [0, 1]) and depth (H x W) from a camera at ``position``."""
    fx, fy, cx, cy = intrinsics_for(width, height)

    def trace(u, v):
        ray = np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)])
        best = np.full(u.shape, np.inf)
        color = np.zeros(u.shape + (3,))
        for p in planes:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (p.offset - position[p.axis]) / ray[p.axis]
            t = np.where(np.isfinite(t) & (t > 0), t, np.inf)
            a_ax, b_ax = [i for i in range(3) if i != p.axis]
            a = position[a_ax] + t * ray[a_ax]
            b = position[b_ax] + t * ray[b_ax]
            hit = np.isfinite(t) & p.contains(a, b) & (t < best)
            best = np.where(hit, t, best)
            color = np.where(hit[..., None], p.texture(np.where(hit, a, 0), np.where(hit, b, 0)),
                             color)
        return color, best

    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    _, depth = trace(u, v)
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    color = np.zeros((height, width, 3))
    for du in offsets:
        for dv in offsets:
            color += trace(u + du, v + dv)[0]
    return color / supersample ** 2, depth


SCENES = {"planes": make_planes, "corridor": make_corridor}


def generate(out, frames: int = 12, motion=(0.05, 0.0, 0.3), plane_depths=(4.0,),
             seed: int = 0, sequences: int = 2, size: tuple[int, int] = (64, 64),
             scene: str = "corridor") -> dict:
    """Write sequences plus ``splits/{train,val,test}_files.txt`` under ``out``.

    Interior frames (with both neighbours) form the training split; the last
    sequence's interior frames double as validation and test split.
    """
    if scene not in SCENES:
        raise ValueError(f"scene must be one of {sorted(SCENES)}, got {scene!r}")
    if frames < 3:
        raise ValueError("need at least 3 frames per sequence")
    out = Path(out)
    width, height = size
    rng = np.random.default_rng(seed)
    fx, fy, cx, cy = intrinsics_for(width, height)
    date_dir = out / DATE
    date_dir.mkdir(parents=True, exist_ok=True)
    P = f"{fx:.6e} 0 {cx:.6e} 0 0 {fy:.6e} {cy:.6e} 0 0 0 1 0"
    (date_dir / "calib_cam_to_cam.txt").write_text(
        f"S_rect_02: {width:.6e} {height:.6e}\nP_rect_02: {P}\n")

    splits: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    step = np.asarray(motion, dtype=np.float64)
    for s in range(sequences):
        drive = f"{DATE}_drive_{s:04d}_sync"
        img_dir = date_dir / drive / "image_02" / "data"
        gt_dir = date_dir / drive / "proj_depth" / "groundtruth" / "image_02"
        img_dir.mkdir(parents=True, exist_ok=True)
        gt_dir.mkdir(parents=True, exist_ok=True)
        planes = SCENES[scene](plane_depths, width, height, rng)
        ids = []
        for k in range(frames):
            image, depth = render(planes, k * step, width, height)
            if not np.isfinite(depth).all():
                raise ValueError(f"frame {k} of sequence {s} sees no surface at some pixels; "
                                 "the motion takes the camera out of the scene")
            name = f"{k:010d}.png"
            Image.fromarray(np.round(image * 255).astype(np.uint8)).save(img_dir / name)
            save_depth_png(gt_dir / name, depth)
            ids.append(f"{DATE}/{drive}/image_02/data/{name}")
        interior = ids[1:-1]
        splits["train"] += interior
        if s == sequences - 1:
            splits["val"] = list(interior)
            splits["test"] = list(interior)

    split_dir = out / "splits"
    split_dir.mkdir(exist_ok=True)
    for mode, ids in splits.items():
        (split_dir / f"{mode}_files.txt").write_text("".join(i + "\n" for i in ids))
    return {mode: split_dir / f"{mode}_files.txt" for mode in splits}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m graphdepth.synthetic", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", required=True, help="output dataset root")
    parser.add_argument("--frames", type=int, default=12, help="frames per sequence (default: 12)")
    parser.add_argument("--motion", type=_floats, default=(0.05, 0.0, 0.3),
                        help="camera translation dx,dy,dz per frame in metres (default: 0.05,0,0.3)")
    parser.add_argument("--plane-depths", type=_floats, default=(4.0,),
                        help="plane depths in metres; the last one is the end wall or background "
                             "(default: 4)")
    parser.add_argument("--scene", choices=sorted(SCENES), default="corridor",
                        help="plane layout (default: corridor)")
    parser.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    parser.add_argument("--sequences", type=int, default=2, help="number of sequences (default: 2)")
    parser.add_argument("--size", type=int, nargs=2, default=(64, 64), metavar=("W", "H"),
                        help="stored image size (default: 64 64)")
    args = parser.parse_args(argv)
    if len(args.motion) != 3:
        parser.error("--motion takes three comma-separated values")
    generate(args.out, args.frames, args.motion, args.plane_depths, args.seed, args.sequences,
             tuple(args.size), args.scene)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

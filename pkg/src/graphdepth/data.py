"""KITTI-raw and Make3D readers.

Expected KITTI layout (the public raw-data convention)::

    root/<date>/calib_cam_to_cam.txt
    root/<date>/<drive>/image_02/data/<frame:010d>.png
    root/<date>/<drive>/proj_depth/groundtruth/image_02/<frame:010d>.png   # uint16, metres * 256

Sample ids are image paths relative to ``root``. Split files hold one id per
line; the ``"<drive folder> <frame> <l|r>"`` lines used by common Eigen split
lists are accepted and converted.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .geometry import CameraIntrinsics

# Eigen split sizes after static-frame removal
EIGEN_SPLIT_SIZES = {"train": 39810, "val": 4424, "test": 697}
MAKE3D_TEST_SIZE = 134
DEPTH_SCALE = 256.0

_PATH_LINE = re.compile(r"^(?P<drive>[^\s]+)/image_0(?P<cam>[23])/data/(?P<frame>\d+)\.(?P<ext>png|jpg)$")
_EIGEN_LINE = re.compile(r"^(?P<drive>[^\s]+)\s+(?P<frame>\d+)\s+(?P<side>[lr])$")
_SIDE_CAM = {"l": "2", "r": "3"}


class SplitError(ValueError):
    pass


@dataclass
class FrameTriplet:
    target: torch.Tensor  # 3 x H x W
    sources: list[torch.Tensor]  # frames t-1, t+1
    intrinsics: CameraIntrinsics
    id: str


@dataclass
class EvalSample:
    image: torch.Tensor  # 3 x H x W
    gt_depth: np.ndarray  # H' x W', 0 = missing
    id: str


def parse_split_line(line: str) -> str:
    line = line.strip()
    m = _PATH_LINE.match(line)
    if m:
        return line
    m = _EIGEN_LINE.match(line)
    if m:
        cam = _SIDE_CAM[m["side"]]
        return f"{m['drive']}/image_0{cam}/data/{int(m['frame']):010d}.png"
    raise SplitError(f"cannot parse split line {line!r}")


def neighbor_id(sample_id: str, offset: int) -> str:
    m = _PATH_LINE.match(sample_id)
    if m is None:
        raise SplitError(f"malformed sample id {sample_id!r}")
    frame = m["frame"]
    n = int(frame) + offset
    if n < 0:
        raise ValueError(f"{sample_id} has no frame at offset {offset}")
    return f"{m['drive']}/image_0{m['cam']}/data/{n:0{len(frame)}d}.{m['ext']}"


def gt_path(root, sample_id: str) -> Path:
    m = _PATH_LINE.match(sample_id)
    if m is None:
        raise SplitError(f"malformed sample id {sample_id!r}")
    return Path(root) / m["drive"] / "proj_depth" / "groundtruth" / f"image_0{m['cam']}" / \
        f"{m['frame']}.png"


def calib_path(root, sample_id: str) -> Path:
    drive = Path(sample_id).parts[0]
    return Path(root) / drive / "calib_cam_to_cam.txt"


def load_split(root, split_file, mode: str = "train") -> list[str]:
    """Ordered, validated sample ids.

    Training and validation ids must have both temporal neighbours; test ids
    must have ground truth. Blank lines and ``#`` comments are skipped.
    """
    if mode not in ("train", "val", "test"):
        raise ValueError(f"mode must be train, val or test, got {mode!r}")
    root = Path(root)
    ids, linenos, bad = [], [], []
    for lineno, line in enumerate(Path(split_file).read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            ids.append(parse_split_line(line))
            linenos.append(lineno)
        except SplitError:
            bad.append(f"line {lineno}: {line.strip()!r}")
    if bad:
        raise SplitError(f"malformed lines in {split_file}:\n  " + "\n  ".join(bad))

    missing = []
    for lineno, sample_id in zip(linenos, ids):
        needed = [root / sample_id]
        if mode == "test":
            needed.append(gt_path(root, sample_id))
        else:
            try:
                needed += [root / neighbor_id(sample_id, -1), root / neighbor_id(sample_id, 1)]
            except ValueError:
                missing.append(f"line {lineno}: {sample_id} (no previous frame)")
                continue
        missing += [f"line {lineno}: {sample_id} ({p.relative_to(root)})"
                    for p in needed if not p.exists()]
    if missing:
        raise FileNotFoundError(f"{len(missing)} missing file(s) for split {split_file}:\n  "
                                + "\n  ".join(missing))
    return ids


def read_calibration(path, camera: str = "02") -> CameraIntrinsics:
    """Rectified intrinsics of ``camera`` from a KITTI ``calib_cam_to_cam.txt``."""
    for line in Path(path).read_text().splitlines():
        key, _, values = line.partition(":")
        if key.strip() == f"P_rect_{camera}":
            P = np.array(values.split(), dtype=np.float64).reshape(3, 4)
            return CameraIntrinsics(P[0, 0], P[1, 1], P[0, 2], P[1, 2])
    raise ValueError(f"no P_rect_{camera} entry in {path}")


def load_image(path, size: tuple[int, int] | None = None) -> tuple[torch.Tensor, tuple[int, int]]:
    """RGB image as a ``3 x H x W`` float tensor in [0, 1], plus its original (W, H)."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            orig = img.size
            if size is not None and img.size != tuple(size):
                img = img.resize(tuple(size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except OSError as exc:
        raise OSError(f"cannot decode image {path}: {exc}") from exc
    return torch.from_numpy(arr.transpose(2, 0, 1).copy()), orig


def load_depth_png(path) -> np.ndarray:
    """16-bit depth png (metres * 256, 0 = missing) to float metres."""
    try:
        with Image.open(path) as img:
            raw = np.asarray(img)
    except OSError as exc:
        raise OSError(f"cannot decode depth map {path}: {exc}") from exc
    return raw.astype(np.float32) / DEPTH_SCALE


def save_depth_png(path, depth: np.ndarray) -> None:
    raw = np.clip(np.round(np.asarray(depth, dtype=np.float64) * DEPTH_SCALE), 0, 65535)
    Image.fromarray(raw.astype(np.uint16)).save(path)


def load_triplet(root, sample_id: str, resize_to: tuple[int, int] = (1024, 320)) -> FrameTriplet:
    """Frames ``t``, ``t-1``, ``t+1`` resized to ``resize_to = (W, H)`` with matching intrinsics."""
    root = Path(root)
    prev_id, next_id = neighbor_id(sample_id, -1), neighbor_id(sample_id, 1)
    for fid in (prev_id, next_id):
        if not (root / fid).exists():
            raise ValueError(f"{sample_id} lacks neighbour frame {fid}")
    target, (w0, h0) = load_image(root / sample_id, resize_to)
    sources = [load_image(root / fid, resize_to)[0] for fid in (prev_id, next_id)]
    w, h = resize_to
    K = read_calibration(calib_path(root, sample_id)).scaled(w / w0, h / h0)
    return FrameTriplet(target, sources, K, sample_id)


def augment(triplet: FrameTriplet, rng: np.random.Generator, flip: bool = True,
            brightness: float = 0.2, contrast: float = 0.2, saturation: float = 0.2) -> FrameTriplet:
    """Same colour jitter and optional horizontal flip applied to all three frames."""
    b = rng.uniform(1 - brightness, 1 + brightness)
    c = rng.uniform(1 - contrast, 1 + contrast)
    s = rng.uniform(1 - saturation, 1 + saturation)
    do_flip = flip and rng.random() < 0.5

    def jitter(img):
        img = img * b
        mean = img.mean()
        img = (img - mean) * c + mean
        grey = img.mean(0, keepdim=True)
        img = (img - grey) * s + grey
        img = img.clamp(0, 1)
        return img.flip(-1) if do_flip else img

    K = triplet.intrinsics
    if do_flip:
        w = triplet.target.shape[-1]
        K = CameraIntrinsics(K.fx, K.fy, (w - 1) - K.cx, K.cy)
    return FrameTriplet(jitter(triplet.target), [jitter(s_) for s_ in triplet.sources], K,
                        triplet.id)


def make3d_ids(root) -> list[str]:
    return sorted(p.stem.removeprefix("img-") for p in (Path(root) / "Test134").glob("img-*.jpg"))


def load_eval_sample(root, sample_id: str, dataset: str = "kitti",
                     resize_to: tuple[int, int] | None = None) -> EvalSample:
    """Image plus ground-truth depth (0 marks missing).

    KITTI ground truth keeps its native resolution. Make3D laser depth is
    resampled onto the image grid.
    """
    root = Path(root)
    if dataset == "kitti":
        path = gt_path(root, sample_id)
        if not path.exists():
            raise FileNotFoundError(f"no ground truth for {sample_id}: {path}")
        image, _ = load_image(root / sample_id, resize_to)
        return EvalSample(image, load_depth_png(path), sample_id)
    if dataset == "make3d":
        from scipy.io import loadmat

        mat = root / "Gridlaserdata" / f"depth_sph_corr-{sample_id}.mat"
        if not mat.exists():
            raise FileNotFoundError(f"no ground truth for {sample_id}: {mat}")
        image, (w0, h0) = load_image(root / "Test134" / f"img-{sample_id}.jpg", resize_to)
        grid = loadmat(mat)["Position3DGrid"][:, :, 3].astype(np.float32)
        depth = Image.fromarray(grid).resize((w0, h0), Image.BILINEAR)
        return EvalSample(image, np.asarray(depth, dtype=np.float32), sample_id)
    raise ValueError(f"unknown dataset {dataset!r}")


class TripletDataset:
    """Split ids bound to a root; items are loaded on access."""

    def __init__(self, root, ids: list[str], resize_to: tuple[int, int] = (1024, 320)):
        self.root = Path(root)
        self.ids = list(ids)
        self.resize_to = tuple(resize_to)

    @classmethod
    def from_split(cls, root, split_file, mode="train", resize_to=(1024, 320)):
        return cls(root, load_split(root, split_file, mode), resize_to)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, index: int) -> FrameTriplet:
        return load_triplet(self.root, self.ids[index], self.resize_to)


@dataclass
class Batch:
    target: torch.Tensor
    sources: list[torch.Tensor]
    K: torch.Tensor  # B x 3 x 3
    ids: list[str]

    def to(self, dtype=None, device=None) -> "Batch":
        return Batch(self.target.to(device, dtype), [s.to(device, dtype) for s in self.sources],
                     self.K.to(device, dtype), self.ids)


def collate(triplets: list[FrameTriplet]) -> Batch:
    return Batch(
        torch.stack([t.target for t in triplets]),
        [torch.stack([t.sources[k] for t in triplets]) for k in range(2)],
        torch.stack([t.intrinsics.matrix(torch.float64) for t in triplets]).float(),
        [t.id for t in triplets],
    )

"""Warp a synthetic frame into its neighbours using ground-truth depth and motion.

With the true geometry the reconstruction error should sit well below the
error of simply comparing the raw frames.

    python demos/warp_check.py [--out /tmp/warp_demo]
"""
import argparse
import tempfile

import numpy as np
import torch

from graphdepth.data import load_eval_sample, load_split, load_triplet
from graphdepth.geometry import RigidTransform, synthesize_view
from graphdepth.losses import photometric_loss
from graphdepth.synthetic import generate

MOTION = (0.05, 0.0, 0.3)  # camera translation per frame, generate() default


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=None, help="dataset directory (default: a temp dir)")
    args = parser.parse_args()
    root = args.out or tempfile.mkdtemp(prefix="warp_demo_")
    generate(root, motion=MOTION)
    sample_id = load_split(root, f"{root}/splits/train_files.txt", "train")[3]

    triplet = load_triplet(root, sample_id, resize_to=(64, 64))
    depth = torch.from_numpy(load_eval_sample(root, sample_id).gt_depth)[None, None]
    step = torch.tensor([MOTION])
    # a point fixed in the world moves by -motion in the camera of the next frame
    for name, source, t in (("t-1", triplet.sources[0], step), ("t+1", triplet.sources[1], -step)):
        T = RigidTransform(torch.eye(3)[None], t)
        rec, mask = synthesize_view(source[None], depth, T, triplet.intrinsics)
        raw = float(photometric_loss(source[None], triplet.target[None]))
        warped = float(photometric_loss(rec, triplet.target[None], mask))
        print(f"{name}: raw frame error {raw:.4f}, warped error {warped:.4f}, "
              f"valid pixels {float(mask.mean()) * 100:.0f}%")
    print(f"frame {sample_id} under {root}")
    return 0 if np.isfinite(warped) else 1


if __name__ == "__main__":
    raise SystemExit(main())

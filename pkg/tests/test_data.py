import numpy as np
import pytest
import torch
from PIL import Image
from scipy.io import savemat

from graphdepth.data import (EIGEN_SPLIT_SIZES, MAKE3D_TEST_SIZE, SplitError, TripletDataset,
                             augment, collate, gt_path, load_eval_sample, load_split, load_triplet,
                             make3d_ids, neighbor_id, parse_split_line, read_calibration,
                             save_depth_png)

DRIVE = "2011_09_26/2011_09_26_drive_0002_sync"


def make_kitti(root, frames, size=(8, 4), with_gt=True):
    date = root / "2011_09_26"
    img_dir = root / DRIVE / "image_02" / "data"
    gt_dir = root / DRIVE / "proj_depth" / "groundtruth" / "image_02"
    img_dir.mkdir(parents=True)
    gt_dir.mkdir(parents=True)
    (date / "calib_cam_to_cam.txt").write_text(
        "S_rect_02: 8 4\nP_rect_02: 7.0 0 3.5 0 0 7.0 1.5 0 0 0 1 0\n")
    r = np.random.default_rng(0)
    w, h = size
    for k in range(frames):
        name = f"{k:010d}.png"
        Image.fromarray(r.integers(0, 256, (h, w, 3), dtype=np.uint8)).save(img_dir / name)
        if with_gt:
            depth = r.uniform(1, 60, (h, w))
            depth[0, 0] = 0  # no lidar return
            save_depth_png(gt_dir / name, depth)
    return [f"{DRIVE}/image_02/data/{k:010d}.png" for k in range(frames)]


def test_split_line_formats():
    assert parse_split_line(f"{DRIVE}/image_02/data/0000000005.png") == \
        f"{DRIVE}/image_02/data/0000000005.png"
    assert parse_split_line(f"{DRIVE} 5 r") == f"{DRIVE}/image_03/data/0000000005.png"
    with pytest.raises(SplitError):
        parse_split_line("not a frame")
    assert neighbor_id(f"{DRIVE}/image_02/data/0000000005.png", -1).endswith("0000000004.png")
    with pytest.raises(ValueError):
        neighbor_id(f"{DRIVE}/image_02/data/0000000000.png", -1)


def test_test_split_of_eigen_size(tmp_path):
    n = EIGEN_SPLIT_SIZES["test"]
    ids = make_kitti(tmp_path, n)
    split = tmp_path / "test_files.txt"
    split.write_text("".join(f"{DRIVE} {k} l\n" for k in range(n)))
    got = load_split(tmp_path, split, "test")
    assert len(got) == 697 and got == ids


def test_empty_split(tmp_path):
    (tmp_path / "empty.txt").write_text("")
    assert load_split(tmp_path, tmp_path / "empty.txt") == []


def test_missing_frame_names_the_line(tmp_path):
    ids = make_kitti(tmp_path, 4)
    split = tmp_path / "s.txt"
    split.write_text(f"{ids[1]}\n{ids[2]}\n{DRIVE}/image_02/data/0000000009.png\n")
    with pytest.raises(FileNotFoundError, match="line 3: .*0000000009"):
        load_split(tmp_path, split, "train")


def test_malformed_lines_are_numbered(tmp_path):
    split = tmp_path / "s.txt"
    split.write_text("# comment\n\ngarbage here please\nmore junk\n")
    with pytest.raises(SplitError, match="line 3.*\n.*line 4"):
        load_split(tmp_path, split)


def test_first_frame_is_not_a_training_id(tmp_path):
    ids = make_kitti(tmp_path, 3)
    split = tmp_path / "s.txt"
    split.write_text(ids[0] + "\n")
    with pytest.raises(FileNotFoundError, match="no previous frame"):
        load_split(tmp_path, split, "train")
    split.write_text(ids[2] + "\n")
    with pytest.raises(FileNotFoundError, match="0000000003"):
        load_split(tmp_path, split, "train")
    split.write_text(ids[1] + "\n")
    assert load_split(tmp_path, split, "train") == [ids[1]]


def test_triplet_resize_scales_intrinsics(tmp_path):
    ids = make_kitti(tmp_path, 3)
    t = load_triplet(tmp_path, ids[1], resize_to=(16, 12))
    assert t.target.shape == (3, 12, 16) and all(s.shape == (3, 12, 16) for s in t.sources)
    K0 = read_calibration(tmp_path / "2011_09_26" / "calib_cam_to_cam.txt")
    assert (t.intrinsics.fx, t.intrinsics.fy) == (K0.fx * 2, K0.fy * 3)
    assert (t.intrinsics.cx, t.intrinsics.cy) == (K0.cx * 2, K0.cy * 3)
    for img in [t.target] + t.sources:
        assert float(img.min()) >= 0 and float(img.max()) <= 1


def test_loading_is_deterministic(tmp_path):
    ids = make_kitti(tmp_path, 5)
    ds = TripletDataset(tmp_path, ids[1:4], resize_to=(8, 4))
    a, b = collate([ds[i] for i in range(3)]), collate([ds[i] for i in range(3)])
    assert torch.equal(a.target, b.target) and a.ids == b.ids == ids[1:4]
    assert a.K.shape == (3, 3, 3)


def test_augment_applies_one_flip_to_all_frames(tmp_path):
    ids = make_kitti(tmp_path, 3)
    t = load_triplet(tmp_path, ids[1], resize_to=(8, 4))
    for seed in range(6):
        out = augment(t, np.random.default_rng(seed), brightness=0, contrast=0, saturation=0)
        same = lambda a, b: torch.allclose(a, b, atol=1e-6)  # noqa: E731
        flipped = same(out.target, t.target.flip(-1))
        assert flipped or same(out.target, t.target)
        for s_out, s_in in zip(out.sources, t.sources):
            assert same(s_out, s_in.flip(-1) if flipped else s_in)
        assert out.intrinsics.cx == (7 - t.intrinsics.cx if flipped else t.intrinsics.cx)


def test_kitti_eval_sample(tmp_path):
    ids = make_kitti(tmp_path, 2)
    s = load_eval_sample(tmp_path, ids[0])
    assert s.gt_depth[0, 0] == 0 and bool((s.gt_depth >= 0).all())
    assert np.isfinite(s.gt_depth).all()
    gt_path(tmp_path, ids[1]).unlink()
    with pytest.raises(FileNotFoundError, match="ground truth"):
        load_eval_sample(tmp_path, ids[1])


def test_make3d_fixture(tmp_path):
    (tmp_path / "Test134").mkdir()
    (tmp_path / "Gridlaserdata").mkdir()
    r = np.random.default_rng(0)
    for k in range(MAKE3D_TEST_SIZE):
        name = f"img-{k:03d}"
        Image.fromarray(r.integers(0, 256, (8, 6, 3), dtype=np.uint8)).save(
            tmp_path / "Test134" / f"{name}.jpg")
    grid = np.zeros((55, 305, 4))
    grid[:, :, 3] = r.uniform(1, 80, (55, 305))
    savemat(tmp_path / "Gridlaserdata" / "depth_sph_corr-000.mat", {"Position3DGrid": grid})
    ids = make3d_ids(tmp_path)
    assert len(ids) == 134 and ids[0] == "000"
    s = load_eval_sample(tmp_path, "000", "make3d")
    assert s.image.shape == (3, 8, 6) and s.gt_depth.shape == (8, 6)
    with pytest.raises(FileNotFoundError):
        load_eval_sample(tmp_path, "001", "make3d")
    with pytest.raises(ValueError, match="dataset"):
        load_eval_sample(tmp_path, "000", "nyu")


def test_synthetic_split(synth_root, synth_train):
    assert len(synth_train) == 20
    item = synth_train[0]
    assert item.target.shape == (3, 64, 64)
    val = load_split(synth_root, synth_root / "splits" / "val_files.txt", "val")
    test = load_split(synth_root, synth_root / "splits" / "test_files.txt", "test")
    assert val == test and len(test) == 10

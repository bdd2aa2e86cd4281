"""Self-supervised monocular depth with a graph-convolution decoder.

Depth and ego-motion networks are trained jointly from video triplets by
warping neighbouring frames into the target view. Submodules:

graph       sparse 8-neighbourhood graphs and graph convolution
geometry    camera model, rigid motion and differentiable view synthesis
depthnet    residual encoder plus multi-scale graph decoder
posenet     ego-motion regressor
losses      photometric, reconstruction and smoothness terms
metrics     KITTI / Make3D error measures and reports
data        KITTI-raw and Make3D readers
trainer     optimisation loop, schedule, logging and checkpoints
synthetic   textured-plane sequences in KITTI layout
cli         ``graphdepth train|eval|infer``
"""
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, restore, save_checkpoint
from .depthnet import TOY_DEPTH, DepthNet, DepthNetConfig, graph_levels
from .geometry import (CameraIntrinsics, RigidTransform, depth_to_disp, disp_to_depth,
                       pose_to_transform, rodrigues, synthesize_view)
from .graph import (SparseGraph, add_self_loops, build_adjacency, gcn_forward, merge_adjacency,
                    upsample_adjacency)
from .losses import LossBreakdown, LossConfig, photometric_loss, reconstruction_loss, \
    smoothness_loss, ssim, total_loss
from .metrics import DepthMetrics, Make3DMetrics, evaluate, evaluate_make3d, median_scale
from .posenet import TOY_POSENET, PoseNet, PoseNetConfig
from .trainer import TOY_TRAIN, TrainConfig, Trainer, fit, lr_at

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "Checkpoint", "CheckpointError", "DepthMetrics", "DepthNet",
    "DepthNetConfig", "LossBreakdown", "LossConfig", "Make3DMetrics", "PoseNet", "PoseNetConfig",
    "RigidTransform", "SparseGraph", "TOY_DEPTH", "TOY_POSENET", "TOY_TRAIN", "TrainConfig",
    "Trainer", "add_self_loops", "build_adjacency", "depth_to_disp", "disp_to_depth", "evaluate",
    "evaluate_make3d", "fit", "gcn_forward", "graph_levels", "load_checkpoint", "lr_at",
    "median_scale", "merge_adjacency", "photometric_loss", "pose_to_transform",
    "reconstruction_loss", "restore", "rodrigues", "save_checkpoint", "smoothness_loss", "ssim",
    "synthesize_view", "total_loss", "upsample_adjacency",
]

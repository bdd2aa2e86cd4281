"""Checkpoint archive: one ``.npz`` mapping dotted parameter names to arrays.

Keys are ``depth.<state-dict name>``, ``pose.<state-dict name>`` and
``optim.<parameter name>.<adam slot>``; ``__meta__`` holds a JSON string with
the format version, iteration counters and the config snapshot.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

VERSION = "graphdepth-ckpt-1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def section(self, prefix: str) -> dict[str, torch.Tensor]:
        p = prefix + "."
        return {k[len(p):]: torch.from_numpy(v.copy()) for k, v in self.arrays.items()
                if k.startswith(p)}


def named_parameters(depth_net, pose_net) -> list[tuple[str, torch.nn.Parameter]]:
    """Trainable parameters of both networks under their archive names, in optimiser order."""
    return [(f"depth.{n}", p) for n, p in depth_net.named_parameters()] + \
        [(f"pose.{n}", p) for n, p in pose_net.named_parameters()]


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().copy()


def save_checkpoint(path, depth_net, pose_net, optimizer=None, meta: dict | None = None) -> Path:
    """Write atomically: the archive appears under ``path`` only once complete."""
    path = Path(path)
    arrays = {}
    for prefix, net in (("depth", depth_net), ("pose", pose_net)):
        for name, value in net.state_dict().items():
            arrays[f"{prefix}.{name}"] = _to_numpy(value)
    if optimizer is not None:
        names = [n for n, _ in named_parameters(depth_net, pose_net)]
        state = optimizer.state_dict()["state"]
        for idx, slots in state.items():
            for slot, value in slots.items():
                arrays[f"optim.{names[idx]}.{slot}"] = _to_numpy(torch.as_tensor(value))
    meta = dict(meta or {})
    meta["version"] = VERSION
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as archive:
        arrays = {k: archive[k] for k in archive.files}
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path} has no metadata record")
    meta = json.loads(str(arrays.pop("__meta__")))
    if meta.get("version") != VERSION:
        raise CheckpointError(f"{path} has version {meta.get('version')!r}, expected {VERSION!r}")
    return Checkpoint(arrays, meta)


def restore(ckpt: Checkpoint, depth_net, pose_net, optimizer=None) -> None:
    """Load network (and optionally optimiser) state; shapes must match exactly."""
    for prefix, net in (("depth", depth_net), ("pose", pose_net)):
        state = ckpt.section(prefix)
        own = net.state_dict()
        if set(state) != set(own):
            missing = sorted(set(own) - set(state))[:5]
            extra = sorted(set(state) - set(own))[:5]
            raise CheckpointError(f"{prefix} network mismatch: missing {missing}, unexpected {extra}")
        for k, v in state.items():
            if tuple(v.shape) != tuple(own[k].shape):
                raise CheckpointError(f"{prefix}.{k}: checkpoint shape {tuple(v.shape)}, "
                                      f"model shape {tuple(own[k].shape)}")
        net.load_state_dict(state)
    if optimizer is not None:
        names = [n for n, _ in named_parameters(depth_net, pose_net)]
        slots = ckpt.section("optim")
        state = {}
        for idx, name in enumerate(names):
            entry = {k[len(name) + 1:]: v for k, v in slots.items() if k.startswith(name + ".")
                     and "." not in k[len(name) + 1:]}
            if entry:
                state[idx] = entry
        sd = optimizer.state_dict()
        sd["state"] = state
        optimizer.load_state_dict(sd)

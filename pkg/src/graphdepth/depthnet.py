"""Depth network: residual encoder plus a multi-scale graph-convolution decoder."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import RESNET50, TOY, EncoderConfig, ResidualEncoder
from .graph import (SparseGraph, add_self_loops, build_adjacency, gcn_forward, merge_adjacency,
                    support_size, upsample_adjacency)

LEVELS = (4, 3, 2, 1)
DISP_EPS = 1e-6


@dataclass(frozen=True)
class DepthNetConfig:
    encoder: EncoderConfig = RESNET50
    decoder_channels: tuple[int, ...] = (512, 256, 128, 64)  # iL4 ... iL1
    input_size: tuple[int, int] = (320, 1024)  # (height, width)
    P: float = 0.7
    scale_mode: str = "MS"
    gcn_activation: str = "log_softmax"
    row_normalize: bool = False

    def __post_init__(self):
        if self.scale_mode not in ("MS", "SS"):
            raise ValueError(f"scale_mode must be 'MS' or 'SS', got {self.scale_mode!r}")
        if self.gcn_activation not in ("relu", "log_softmax"):
            raise ValueError(f"gcn_activation must be 'relu' or 'log_softmax', "
                             f"got {self.gcn_activation!r}")
        if not 0.0 <= self.P <= 1.0:
            raise ValueError(f"P must lie in [0, 1], got {self.P}")
        h, w = self.input_size
        if h % 32 or w % 32:
            raise ValueError(f"input size must be divisible by 32, got {h}x{w}")


TOY_DEPTH = DepthNetConfig(encoder=TOY, decoder_channels=(32, 16, 16, 8), input_size=(64, 64))


def _upsample(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="nearest")


def _disparity(logits: torch.Tensor) -> torch.Tensor:
    """Sigmoid squeezed into ``[DISP_EPS, 1 - DISP_EPS]``.

    Node-wise log-softmax logits can sit far below -80, where a float32
    sigmoid rounds to exactly 0. The affine squeeze keeps the range open
    without the dead gradient of a clamp.
    """
    return DISP_EPS + (1 - 2 * DISP_EPS) * torch.sigmoid(logits)


def _nodes(x: torch.Tensor) -> torch.Tensor:
    """``C x h x w`` map to ``(h*w) x C`` node features, row-major."""
    return x.flatten(1).transpose(0, 1)


class GraphHead(nn.Module):
    """Two graph convolutions (ReLU, then the configured normaliser) to one channel."""

    def __init__(self, in_channels: int, activation: str, row_normalize: bool):
        super().__init__()
        self.activation = activation
        self.row_normalize = row_normalize
        self.weight1 = nn.Parameter(torch.empty(in_channels, 1))
        self.weight2 = nn.Parameter(torch.empty(1, 1))
        # inputs are mostly non-negative (LeakyReLU features, disparity), so a
        # non-negative start keeps the single ReLU channel alive at init
        bound = (6.0 / (in_channels + 1)) ** 0.5
        nn.init.uniform_(self.weight1, 0.0, bound)
        nn.init.uniform_(self.weight2, 0.5, 1.5)

    def forward(self, graph: SparseGraph, nodes: torch.Tensor) -> torch.Tensor:
        graph = add_self_loops(graph)
        z = gcn_forward(graph, nodes, self.weight1, "relu", self.row_normalize)
        # a single output channel makes the per-row log-softmax identically 0,
        # so the decoder normalises across the graph's nodes instead
        return gcn_forward(graph, z, self.weight2, self.activation, self.row_normalize,
                           log_softmax_dim="nodes")


class DepthDecoder(nn.Module):
    def __init__(self, num_ch_enc: list[int], config: DepthNetConfig, seed: int | None = None):
        super().__init__()
        self.config = config
        ch = config.decoder_channels
        h, w = config.input_size
        self.iconv = nn.ModuleDict()
        self.heads = nn.ModuleDict()
        for i, level in enumerate(LEVELS):
            in_ch = num_ch_enc[level] + (ch[i - 1] if level < 4 else 0)
            self.iconv[str(level)] = nn.Sequential(nn.Conv2d(in_ch, ch[i], 3, padding=1),
                                                   nn.LeakyReLU())
            node_ch = ch[i] + (1 if level < 4 else 0)
            if level == 4 or config.scale_mode == "MS":
                self.heads[str(level)] = GraphHead(node_ch, config.gcn_activation,
                                                   config.row_normalize)
            else:
                self.heads[str(level)] = nn.Conv2d(node_ch, 1, 3, padding=1)
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        n4 = support_size(h // 16, w // 16)
        self.adjacency4 = nn.Parameter(torch.rand(n4, generator=gen))

    def decode_level(self, level: int, skip: torch.Tensor, prev_features=None, prev_disp=None,
                     prev_graphs=None):
        """One decoder step; returns ``(features, graphs, disp)``.

        ``skip`` is the encoder output one octave below the level's output
        resolution. ``graphs`` holds one adjacency (without self-loops) per
        batch element, or ``None`` for a plain convolution head.
        """
        if level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}, got {level}")
        graph_head = isinstance(self.heads[str(level)], GraphHead)
        if level == 4:
            if prev_features is not None or prev_disp is not None or prev_graphs is not None:
                raise ValueError("level 4 takes no previous-level inputs")
            x = skip
        else:
            if prev_features is None or prev_disp is None:
                raise ValueError(f"level {level} needs the previous level's features and disparity")
            if graph_head and prev_graphs is None:
                raise ValueError(f"level {level} needs the previous level's graphs")
            x = torch.cat([prev_features, skip], 1)
        features = self.iconv[str(level)](_upsample(x))
        b, _, h, w = features.shape
        node_maps = features if level == 4 else torch.cat([features, _upsample(prev_disp)], 1)

        head = self.heads[str(level)]
        if not graph_head:
            return features, None, _disparity(head(node_maps))

        graphs, outs = [], []
        for k in range(b):
            nodes = _nodes(features[k])
            if level == 4:
                if self.adjacency4.numel() != support_size(h, w):
                    raise ValueError(f"decoder built for input {self.config.input_size}, "
                                     f"got a {h}x{w} level-4 grid")
                graph = build_adjacency(nodes, (h, w), self.config.P, self.adjacency4)
            else:
                rebuilt = build_adjacency(nodes, (h, w), self.config.P)
                graph = merge_adjacency(upsample_adjacency(prev_graphs[k]), rebuilt)
            graphs.append(graph)
            z = head(graph, _nodes(node_maps[k]))
            outs.append(z.transpose(0, 1).reshape(1, h, w))
        return features, graphs, _disparity(torch.stack(outs))

    def forward(self, pyramid: list[torch.Tensor]) -> list[torch.Tensor]:
        features = disp = graphs = None
        disps = []
        for level in LEVELS:
            features, new_graphs, disp = self.decode_level(level, pyramid[level], features, disp,
                                                           graphs)
            graphs = new_graphs if new_graphs is not None else graphs
            disps.append(disp)
        return disps


class DepthNet(nn.Module):
    """Image to a four-level disparity pyramid ``[Disp4, Disp3, Disp2, Disp1]``."""

    def __init__(self, config: DepthNetConfig = DepthNetConfig(), seed: int | None = None):
        super().__init__()
        self.config = config
        self.encoder = ResidualEncoder(config.encoder)
        self.decoder = DepthDecoder(self.encoder.num_ch_enc, config, seed)

    def encode(self, image: torch.Tensor) -> list[torch.Tensor]:
        return self.encoder(image)

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        h, w = image.shape[-2:]
        if (h, w) != tuple(self.config.input_size):
            raise ValueError(f"network built for {self.config.input_size[0]}x"
                             f"{self.config.input_size[1]} inputs, got {h}x{w}")
        return self.decoder(self.encode(image))

    predict_disparity = forward

    @torch.no_grad()
    def predict_full(self, image: torch.Tensor) -> torch.Tensor:
        """Finest disparity upsampled to the input resolution."""
        disp = self(image)[-1]
        return F.interpolate(disp, size=image.shape[-2:], mode="bilinear", align_corners=False)


def graph_levels(net: DepthNet) -> list[int]:
    """Decoder levels that run graph convolutions (all four for MS, level 4 for SS)."""
    return [lvl for lvl in LEVELS if isinstance(net.decoder.heads[str(lvl)], GraphHead)]

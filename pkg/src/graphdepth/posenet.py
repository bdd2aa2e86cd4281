"""Ego-motion network: frame pair to a 6-DoF pose ``[rx, ry, rz, tx, ty, tz]``."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .encoder import RESNET18, TOY_POSE, EncoderConfig, ResidualEncoder


@dataclass(frozen=True)
class PoseNetConfig:
    encoder: EncoderConfig = RESNET18
    decoder_channels: int = 256
    output_scale: float = 0.01

    def __post_init__(self):
        if self.encoder.in_channels != 6:
            raise ValueError("the pose encoder takes a channel-stacked frame pair (6 channels)")


TOY_POSENET = PoseNetConfig(encoder=TOY_POSE, decoder_channels=32)


class PoseDecoder(nn.Module):
    def __init__(self, in_channels: int, channels: int = 256, output_scale: float = 0.01):
        super().__init__()
        self.output_scale = output_scale
        self.out1 = nn.Conv2d(in_channels, channels, 1)
        self.out2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.out3 = nn.Conv2d(channels, channels, 3, padding=1)
        self.out4 = nn.Conv2d(channels, 6, 1)
        self.relu = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.relu(self.out1(x))
        x = self.relu(self.out2(x))
        x = self.relu(self.out3(x))
        return self.output_scale * self.out4(x).mean((2, 3))


class PoseNet(nn.Module):
    def __init__(self, config: PoseNetConfig = PoseNetConfig()):
        super().__init__()
        self.config = config
        self.encoder = ResidualEncoder(config.encoder)
        self.decoder = PoseDecoder(self.encoder.num_ch_enc[-1], config.decoder_channels,
                                   config.output_scale)

    def forward(self, source: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """``B x 6`` pose mapping target-camera points into the source camera."""
        if source.shape != target.shape:
            raise ValueError(f"frame shapes differ: {tuple(source.shape)} vs {tuple(target.shape)}")
        return self.decoder(self.encoder(torch.cat([source, target], 1))[-1])

    predict_pose = forward

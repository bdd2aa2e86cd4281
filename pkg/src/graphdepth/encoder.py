"""Five-level residual encoder shared by the depth and pose networks."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
from torchvision.models.resnet import BasicBlock, Bottleneck, conv1x1

_BLOCKS = {"basic": BasicBlock, "bottleneck": Bottleneck}

# ImageNet-style input normalisation used by most monocular depth encoders
_MEAN = 0.45
_STD = 0.225


@dataclass(frozen=True)
class EncoderConfig:
    block: str = "bottleneck"
    layers: tuple[int, ...] = (3, 4, 6, 3)
    stem_channels: int = 64
    widths: tuple[int, ...] = (64, 128, 256, 512)
    in_channels: int = 3

    @property
    def channels(self) -> list[int]:
        expansion = _BLOCKS[self.block].expansion
        return [self.stem_channels] + [w * expansion for w in self.widths]


RESNET50 = EncoderConfig()
RESNET18 = EncoderConfig(block="basic", layers=(2, 2, 2, 2), in_channels=6)
TOY = EncoderConfig(block="basic", layers=(1, 1, 1, 1), stem_channels=8, widths=(8, 16, 32, 64))
TOY_POSE = EncoderConfig(block="basic", layers=(1, 1, 1, 1), stem_channels=8,
                         widths=(8, 16, 32, 64), in_channels=6)


class ResidualEncoder(nn.Module):
    """1x1 conv stem with max-pooling, then four residual stages.

    Every stage halves the resolution, so the five outputs sit at 1/2 ... 1/32
    of the input.
    """

    def __init__(self, config: EncoderConfig = RESNET50):
        super().__init__()
        self.config = config
        block = _BLOCKS[config.block]
        self.num_ch_enc = config.channels
        self.conv1 = nn.Conv2d(config.in_channels, config.stem_channels, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(config.stem_channels)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(kernel_size=3, stride=2, padding=1)
        self.inplanes = config.stem_channels
        for i, (planes, blocks) in enumerate(zip(config.widths, config.layers), start=1):
            setattr(self, f"layer{i}", self._make_layer(block, planes, blocks))

        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def _make_layer(self, block, planes, blocks):
        downsample = nn.Sequential(
            conv1x1(self.inplanes, planes * block.expansion, stride=2),
            nn.BatchNorm2d(planes * block.expansion),
        )
        layers = [block(self.inplanes, planes, 2, downsample)]
        self.inplanes = planes * block.expansion
        layers += [block(self.inplanes, planes) for _ in range(1, blocks)]
        return nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"input height and width must be divisible by 32, got {h}x{w}")
        x = (x - _MEAN) / _STD
        features = [self.maxpool(self.relu(self.bn1(self.conv1(x))))]
        for i in range(1, 5):
            features.append(getattr(self, f"layer{i}")(features[-1]))
        return features


def load_pretrained(encoder: ResidualEncoder, path) -> list[str]:
    """Copy matching tensors from a saved state dict into ``encoder``.

    Keys follow torchvision's ResNet naming, so ImageNet checkpoints load for
    the residual stages (the 1x1 stem has no ImageNet counterpart). Returns
    the loaded keys.
    """
    state = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    own = encoder.state_dict()
    loaded = {k: v for k, v in state.items() if k in own and own[k].shape == v.shape}
    if not loaded:
        raise ValueError(f"no tensor in {path} matches the encoder")
    encoder.load_state_dict(loaded, strict=False)
    return sorted(loaded)

"""The two compact 3D CNN backbones.

Five conv stages (3x3x3 kernels, stride 2, BatchNorm + ReLU) double the
channel count from the base width up to the representation width, then two
dense layers end in 2 softmax units. Kernel sizes and the dense width are
our choices; they put the tiny/small variants at ~1.5M and ~5.9M parameters
with inputs of (N, C, 24, 96, 96).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import TrainerError


@dataclass(frozen=True)
class BackboneSpec:
    name: str  # "tiny" or "small"
    in_channels: int = 4

    def __post_init__(self) -> None:
        if self.name not in ("tiny", "small"):
            raise TrainerError(f"unknown backbone {self.name!r}")
        if self.in_channels not in (3, 4):
            raise TrainerError("in_channels must be 3 or 4")

    @property
    def conv_channels(self) -> tuple[int, ...]:
        base = 8 if self.name == "tiny" else 16
        return tuple(base * 2**i for i in range(5))  # doubles up to 128 / 256

    @property
    def hidden_units(self) -> int:
        return 1024 if self.name == "tiny" else 2048


class Backbone3D(nn.Module):
    """forward() maps (N, C, 24, 96, 96) to (N, 2) softmax probabilities."""

    INPUT_SHAPE = (24, 96, 96)

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        layers: list[nn.Module] = []
        channels = spec.in_channels
        for width in spec.conv_channels:
            layers += [
                nn.Conv3d(channels, width, kernel_size=3, stride=2, padding=1),
                nn.BatchNorm3d(width),
                nn.ReLU(inplace=True),
            ]
            channels = width
        self.features = nn.Sequential(*layers)
        # (24, 96, 96) shrinks to (1, 3, 3) after five stride-2 stages
        flat = spec.conv_channels[-1] * 1 * 3 * 3
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(flat, spec.hidden_units),
            nn.ReLU(inplace=True),
            nn.Linear(spec.hidden_units, 2),
        )

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[1] != self.spec.in_channels:
            raise TrainerError(
                f"expected (N, {self.spec.in_channels}, D, H, W) input, got {tuple(x.shape)}"
            )
        return self.head(self.features(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x), dim=1)


def build_backbone(spec: BackboneSpec | str, in_channels: int = 4) -> Backbone3D:
    if isinstance(spec, str):
        spec = BackboneSpec(name=spec, in_channels=in_channels)
    return Backbone3D(spec)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())

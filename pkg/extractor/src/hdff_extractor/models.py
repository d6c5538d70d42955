"""A tiny demo CNN plus a helper to produce a loadable checkpoint.

Used by the tests as the 2-conv fixture and handy for trying the CLI end
to end without a real pretrained network.
"""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn as nn


class TinyConvNet(nn.Module):
    def __init__(self, num_classes: int = 2):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 4, kernel_size=3, padding=1)
        self.relu1 = nn.ReLU()
        self.conv2 = nn.Conv2d(4, 8, kernel_size=3, padding=1)
        self.relu2 = nn.ReLU()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(8, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.relu1(self.conv1(x))
        x = self.relu2(self.conv2(x))
        x = self.pool(x).flatten(1)
        return self.fc(x)


def save_demo_checkpoint(path: str | Path, seed: int = 0) -> Path:
    """Write a deterministically initialised TinyConvNet checkpoint."""
    torch.manual_seed(seed)
    model = TinyConvNet()
    model.eval()
    torch.save(model, path)
    return Path(path)

"""Image-directory dataset with the usual folder-per-class convention.

If the data directory contains subdirectories, each subdirectory is a
class (labels follow sorted directory names); a flat directory of images
yields an unlabeled dataset. Files are ordered by sorted path so sample
order is stable across runs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DatasetError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm"}


class ImageFolder:
    def __init__(
        self,
        root: str | Path,
        *,
        input_size: int | None = None,
        mean: tuple[float, ...] | None = None,
        std: tuple[float, ...] | None = None,
    ):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DatasetError(f"{self.root}: not a directory")
        self.input_size = input_size
        self.mean = mean
        self.std = std
        class_dirs = sorted(p for p in self.root.iterdir() if p.is_dir())
        if class_dirs:
            self.class_names: list[str] | None = [p.name for p in class_dirs]
            self.paths: list[Path] = []
            self.labels: list[int] | None = []
            for idx, cdir in enumerate(class_dirs):
                files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
                self.paths.extend(files)
                self.labels.extend([idx] * len(files))
        else:
            self.class_names = None
            self.labels = None
            self.paths = sorted(
                p for p in self.root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
            )
        if not self.paths:
            raise DatasetError(f"{self.root}: no images found")

    def __len__(self) -> int:
        return len(self.paths)

    def load(self, index: int) -> torch.Tensor:
        """One image as a float32 CHW tensor in [0, 1], normalised if set."""
        img = Image.open(self.paths[index]).convert("RGB")
        if self.input_size is not None:
            img = img.resize((self.input_size, self.input_size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0  # HWC
        t = torch.from_numpy(arr).permute(2, 0, 1)
        if self.mean is not None:
            t = t - torch.tensor(self.mean, dtype=torch.float32).view(-1, 1, 1)
        if self.std is not None:
            t = t / torch.tensor(self.std, dtype=torch.float32).view(-1, 1, 1)
        return t

    def batches(self, batch_size: int):
        """Yield (tensor of shape (B, 3, H, W), indices); sizes must agree."""
        for start in range(0, len(self.paths), batch_size):
            idx = list(range(start, min(start + batch_size, len(self.paths))))
            imgs = [self.load(i) for i in idx]
            shapes = {tuple(t.shape) for t in imgs}
            if len(shapes) > 1:
                raise DatasetError(
                    f"images differ in size ({sorted(shapes)}); pass --input-size to resize"
                )
            yield torch.stack(imgs), idx

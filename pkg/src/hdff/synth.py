"""Desk-scale synthetic feature packs for exercising the pipeline.

Each class gets a per-layer, per-channel Gaussian prototype; samples are
prototype plus i.i.d. Gaussian noise over the spatial grid. The OOD split
reuses the class prototypes shifted by ``ood_shift`` times a fresh
Gaussian direction, so a shift of zero makes the OOD split statistically
identical to the ID test split (a null experiment), while a shift on the
order of the prototype scale separates them clearly. ``ood_shift`` may be
a single value or one value per layer to concentrate the signal in chosen
layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algebra import splitmix64
from .errors import UsageError
from .packio import write_feature_pack

__all__ = ["SyntheticSpec", "generate"]

_GOLDEN = 0x9E3779B97F4A7C15
_U64 = (1 << 64) - 1


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(splitmix64((seed + (tag + 1) * _GOLDEN) & _U64))
    )


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    train_per_class: int = 200
    test_per_class: int = 100
    channels: tuple[int, ...] = (16, 32, 64, 128, 256)
    spatial: int = 4
    proto_scale: float = 1.0
    noise_scale: float = 0.25
    ood_shift: float | tuple[float, ...] = 1.0
    seed: int = 0

    def shift_per_layer(self) -> list[float]:
        if isinstance(self.ood_shift, (int, float)):
            return [float(self.ood_shift)] * len(self.channels)
        shifts = [float(s) for s in self.ood_shift]
        if len(shifts) != len(self.channels):
            raise UsageError(
                f"{len(shifts)} shift values for {len(self.channels)} layers"
            )
        return shifts

    def validate(self) -> None:
        if self.num_classes < 1 or self.train_per_class < 1 or self.test_per_class < 1:
            raise UsageError("class and sample counts must be >= 1")
        if len(self.channels) < 1 or any(c < 1 for c in self.channels):
            raise UsageError("channel list must be nonempty with positive entries")
        if self.spatial < 1:
            raise UsageError("spatial size must be >= 1")
        if self.proto_scale < 0 or self.noise_scale < 0:
            raise UsageError("scales must be >= 0")
        if any(s < 0 for s in self.shift_per_layer()):
            raise UsageError("OOD shift must be >= 0")


def _pack_arrays(
    spec: SyntheticSpec,
    protos: list[np.ndarray],
    per_class: int,
    noise_rng: np.random.Generator,
) -> tuple[list[np.ndarray], list[int]]:
    labels = [k for k in range(spec.num_classes) for _ in range(per_class)]
    idx = np.asarray(labels)
    arrays = []
    for proto in protos:
        n = len(labels)
        arr = noise_rng.standard_normal(
            (n, spec.spatial, spec.spatial, proto.shape[1]), dtype=np.float32
        )
        arr *= np.float32(spec.noise_scale)
        arr += proto.astype(np.float32)[idx][:, None, None, :]
        arrays.append(arr)
    return arrays, labels


def generate(spec: SyntheticSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write train/, test/ (labelled ID) and ood/ packs under out_dir."""
    spec.validate()
    out_dir = Path(out_dir)
    proto_rng = _stream(spec.seed, 0)
    protos = [
        proto_rng.standard_normal((spec.num_classes, c)) * spec.proto_scale
        for c in spec.channels
    ]
    shift_rng = _stream(spec.seed, 1)
    shifted = [
        proto + s * shift_rng.standard_normal(proto.shape)
        for proto, s in zip(protos, spec.shift_per_layer())
    ]

    paths: dict[str, Path] = {}
    splits = [
        ("train", protos, spec.train_per_class, True, 2),
        ("test", protos, spec.test_per_class, True, 3),
        ("ood", shifted, spec.test_per_class, False, 4),
    ]
    for split, proto_set, per_class, labelled, tag in splits:
        arrays, labels = _pack_arrays(spec, proto_set, per_class, _stream(spec.seed, tag))
        layers = [
            (i + 1, f"synth_layer_{i + 1}", arr) for i, arr in enumerate(arrays)
        ]
        paths[split] = write_feature_pack(
            out_dir / split,
            layers,
            dataset_name="synthetic",
            split=split,
            class_labels=labels if labelled else None,
        )
    return paths

"""Incremental feature-pack writing in the hdff on-disk format.

Layer files are NPY v1.0 (little-endian float32, C order) with the full
(num_samples, height, width, channels) shape written up front, so batches
can be appended as they come off the network without holding a layer in
memory. See the primary package's docs/FORMATS.md for the format.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

MANIFEST_VERSION = 1
_NPY_MAGIC = b"\x93NUMPY"


def npy_header(shape: tuple[int, ...]) -> bytes:
    header = (
        "{'descr': '<f4', 'fortran_order': False, 'shape': "
        + repr(tuple(int(d) for d in shape))
        + ", }"
    )
    pad = (-(10 + len(header) + 1)) % 64
    body = header.encode("ascii") + b" " * pad + b"\n"
    return _NPY_MAGIC + bytes((1, 0)) + struct.pack("<H", len(body)) + body


class TensorFileWriter:
    """Append-only writer for one layer's (N, h, w, c) tensor file."""

    def __init__(self, path: str | Path, num_samples: int, height: int, width: int, channels: int):
        self.path = Path(path)
        self.shape = (num_samples, height, width, channels)
        self._written = 0
        self._fh = open(self.path, "wb")
        self._fh.write(npy_header(self.shape))

    def append(self, batch: np.ndarray) -> None:
        batch = np.ascontiguousarray(batch, dtype="<f4")
        if batch.shape[1:] != self.shape[1:]:
            raise ValueError(
                f"{self.path.name}: batch slab shape {batch.shape[1:]} != {self.shape[1:]}"
            )
        self._fh.write(batch.tobytes(order="C"))
        self._written += batch.shape[0]

    def close(self) -> None:
        self._fh.close()
        if self._written != self.shape[0]:
            raise ValueError(
                f"{self.path.name}: wrote {self._written} samples, declared {self.shape[0]}"
            )


def write_manifest(
    root: str | Path,
    *,
    dataset_name: str,
    split: str,
    num_samples: int,
    layers: Sequence[dict],
    class_labels: Sequence[int] | None,
) -> None:
    manifest = {
        "format_version": MANIFEST_VERSION,
        "dataset_name": dataset_name,
        "split": split,
        "num_samples": int(num_samples),
        "layers": list(layers),
    }
    if class_labels is not None:
        manifest["class_labels"] = [int(l) for l in class_labels]
    (Path(root) / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")

"""On-disk formats: tensor files, feature packs, and model packs.

Tensor files are a strict subset of the NPY v1.0 container: little-endian
float32, C order. A feature pack is a directory with a ``manifest.json``
and one tensor file per layer shaped (num_samples, height, width,
channels); sample i occupies the i-th contiguous slab of each layer file,
so per-sample access never loads a whole layer. A model pack is a single
little-endian binary file (magic ``HDFF``) holding everything a fitted
model needs except the projection matrices, which regenerate from seeds.

Byte layouts are documented in docs/FORMATS.md; all loaders check magic
and version before parsing anything else.
"""

from __future__ import annotations

import ast
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import FormatError, PackValidationError, UsageError
from .pipeline import EnsembleTable, FittedModel, LayerStats

__all__ = [
    "FeaturePack",
    "LayerEntry",
    "MANIFEST_VERSION",
    "MODEL_VERSION",
    "load_model",
    "read_tensor_file",
    "save_model",
    "write_feature_pack",
    "write_tensor_file",
]

MANIFEST_VERSION = 1
MODEL_VERSION = 1

_NPY_MAGIC = b"\x93NUMPY"
_MODEL_MAGIC = b"HDFF"
_POOLING_CODES = {"max": 0, "avg": 1}
_POOLING_NAMES = {v: k for k, v in _POOLING_CODES.items()}


# ---------------------------------------------------------------------------
# NPY v1.0 subset
# ---------------------------------------------------------------------------


def _parse_npy_header(buf: bytes, path: Path) -> tuple[tuple[int, ...], int]:
    """Return (shape, data_offset) after validating the v1.0 header."""
    if len(buf) < 10:
        raise FormatError(f"{path}: truncated header, {len(buf)} bytes (need >= 10)")
    if buf[:6] != _NPY_MAGIC:
        raise FormatError(
            f"{path}: bad magic at offset 0: {buf[:6]!r}, expected {_NPY_MAGIC!r}"
        )
    major, minor = buf[6], buf[7]
    if (major, minor) != (1, 0):
        raise FormatError(
            f"{path}: unsupported format version {major}.{minor} at offset 6, expected 1.0"
        )
    (hlen,) = struct.unpack_from("<H", buf, 8)
    end = 10 + hlen
    if len(buf) < end:
        raise FormatError(
            f"{path}: header declares {hlen} bytes at offset 10 but file has {len(buf) - 10}"
        )
    try:
        header = ast.literal_eval(buf[10:end].decode("ascii"))
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unparseable header dict at offset 10: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header at offset 10 is not a dict literal")
    descr = header.get("descr")
    if descr != "<f4":
        raise FormatError(
            f"{path}: unsupported dtype {descr!r} at offset 10, expected '<f4' "
            "(little-endian float32)"
        )
    if header.get("fortran_order") is not False:
        raise FormatError(f"{path}: fortran_order must be False (C order)")
    shape = header.get("shape")
    if not (
        isinstance(shape, tuple)
        and len(shape) >= 1
        and all(isinstance(d, int) and d >= 0 for d in shape)
    ):
        raise FormatError(f"{path}: bad shape {shape!r} in header")
    return shape, end


def read_tensor_file(path: str | Path) -> NDArray[np.float32]:
    """Read a conforming tensor file fully into memory."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read: {exc}") from exc
    shape, offset = _parse_npy_header(raw, path)
    count = int(np.prod(shape, dtype=np.int64))
    expected = count * 4
    actual = len(raw) - offset
    if actual != expected:
        raise FormatError(
            f"{path}: payload is {actual} bytes at offset {offset}, expected {expected} "
            f"for shape {shape}"
        )
    return np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()


def write_tensor_file(path: str | Path, tensor: NDArray) -> None:
    """Write a float32 C-order tensor as NPY v1.0 with a 64-byte-aligned header."""
    if np.asarray(tensor).ndim == 0:
        raise UsageError("refusing to write a 0-d tensor")
    arr = np.ascontiguousarray(tensor)
    if not np.issubdtype(arr.dtype, np.floating):
        raise UsageError(f"tensor dtype {arr.dtype} is not a float type")
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{path}: tensor contains NaN or Inf")
    arr = arr.astype("<f4", copy=False)
    header = (
        "{'descr': '<f4', 'fortran_order': False, 'shape': "
        + repr(tuple(int(d) for d in arr.shape))
        + ", }"
    )
    # magic(6) + version(2) + hlen(2) + header + '\n' padded to a 64 multiple
    pad = (-(10 + len(header) + 1)) % 64
    header_bytes = header.encode("ascii") + b" " * pad + b"\n"
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_NPY_MAGIC)
            fh.write(bytes((1, 0)))
            fh.write(struct.pack("<H", len(header_bytes)))
            fh.write(header_bytes)
            fh.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise FormatError(f"{path}: cannot write: {exc}") from exc


# ---------------------------------------------------------------------------
# Feature packs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerEntry:
    layer_id: int
    name: str
    channels: int
    height: int
    width: int
    file: str
    dtype: str = "<f4"
    order: str = "C"


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise PackValidationError(msg)


class FeaturePack:
    """Read-only handle over a feature-pack directory.

    Slab reads go through ``os.pread`` on per-layer descriptors, so any
    number of threads can read disjoint samples concurrently.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        try:
            manifest = json.loads(manifest_path.read_text())
        except OSError as exc:
            raise PackValidationError(f"{manifest_path}: cannot read: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise PackValidationError(f"{manifest_path}: invalid JSON: {exc}") from exc
        _require(
            manifest.get("format_version") == MANIFEST_VERSION,
            f"{manifest_path}: format_version {manifest.get('format_version')!r}, "
            f"expected {MANIFEST_VERSION}",
        )
        self.dataset_name: str = manifest.get("dataset_name", "")
        self.split: str = manifest.get("split", "")
        num_samples = manifest.get("num_samples")
        _require(
            isinstance(num_samples, int) and num_samples >= 0,
            f"{manifest_path}: bad num_samples {num_samples!r}",
        )
        self.num_samples: int = num_samples
        labels = manifest.get("class_labels")
        if labels is not None:
            _require(
                isinstance(labels, list) and len(labels) == num_samples,
                f"{manifest_path}: class_labels has {len(labels) if isinstance(labels, list) else '?'} "
                f"entries, expected {num_samples}",
            )
            labels = [int(l) for l in labels]
        self.class_labels: list[int] | None = labels

        raw_layers = manifest.get("layers")
        _require(
            isinstance(raw_layers, list) and len(raw_layers) >= 1,
            f"{manifest_path}: layer list is missing or empty",
        )
        self.layers: list[LayerEntry] = []
        for entry in raw_layers:
            try:
                layer = LayerEntry(
                    layer_id=int(entry["layer_id"]),
                    name=str(entry.get("name", "")),
                    channels=int(entry["channels"]),
                    height=int(entry["height"]),
                    width=int(entry["width"]),
                    file=str(entry["file"]),
                    dtype=str(entry.get("dtype", "<f4")),
                    order=str(entry.get("order", "C")),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise PackValidationError(f"{manifest_path}: bad layer entry {entry!r}: {exc}")
            _require(layer.dtype == "<f4", f"layer {layer.layer_id}: dtype {layer.dtype!r}, expected '<f4'")
            _require(layer.order == "C", f"layer {layer.layer_id}: order {layer.order!r}, expected 'C'")
            _require(
                layer.channels >= 1 and layer.height >= 1 and layer.width >= 1,
                f"layer {layer.layer_id}: non-positive dimensions",
            )
            self.layers.append(layer)
        ids = [l.layer_id for l in self.layers]
        _require(len(ids) == len(set(ids)), f"{manifest_path}: duplicate layer ids {ids}")
        self.layer_ids: list[int] = ids
        self._by_id = {l.layer_id: l for l in self.layers}
        self._fds: dict[int, int] = {}
        self._offsets: dict[int, int] = {}
        self._validate_files()

    def _validate_files(self) -> None:
        for layer in self.layers:
            path = self.root / layer.file
            if not path.is_file():
                raise PackValidationError(f"layer {layer.layer_id}: missing file {path}")
            with open(path, "rb") as fh:
                head = fh.read(4096)
            shape, offset = _parse_npy_header(head, path)
            expected_shape = (self.num_samples, layer.height, layer.width, layer.channels)
            _require(
                shape == expected_shape,
                f"layer {layer.layer_id}: tensor shape {shape} in {path.name}, "
                f"manifest implies {expected_shape}",
            )
            expected_bytes = offset + int(np.prod(expected_shape, dtype=np.int64)) * 4
            actual_bytes = path.stat().st_size
            _require(
                actual_bytes == expected_bytes,
                f"layer {layer.layer_id}: {path.name} is {actual_bytes} bytes, "
                f"expected {expected_bytes}",
            )
            self._offsets[layer.layer_id] = offset

    def layer(self, layer_id: int) -> LayerEntry:
        try:
            return self._by_id[layer_id]
        except KeyError:
            raise PackValidationError(f"pack has no layer id {layer_id}") from None

    def _fd(self, layer_id: int) -> int:
        fd = self._fds.get(layer_id)
        if fd is None:
            fd = os.open(self.root / self.layer(layer_id).file, os.O_RDONLY)
            self._fds[layer_id] = fd
        return fd

    def read_map(self, sample: int, layer_id: int) -> NDArray[np.float32]:
        """Read sample's (height, width, channels) map for one layer."""
        layer = self.layer(layer_id)
        if not 0 <= sample < self.num_samples:
            raise UsageError(f"sample {sample} out of range [0, {self.num_samples})")
        slab = layer.height * layer.width * layer.channels * 4
        offset = self._offsets[layer_id] + sample * slab
        buf = os.pread(self._fd(layer_id), slab, offset)
        if len(buf) != slab:
            raise PackValidationError(
                f"layer {layer_id}: short read for sample {sample}: {len(buf)} of {slab} bytes"
            )
        return (
            np.frombuffer(buf, dtype="<f4")
            .reshape(layer.height, layer.width, layer.channels)
            .copy()
        )

    def sample_maps(self, sample: int, layer_ids: Sequence[int] | None = None) -> list[NDArray]:
        ids = list(layer_ids) if layer_ids is not None else self.layer_ids
        return [self.read_map(sample, lid) for lid in ids]

    def iter_samples(
        self, layer_ids: Sequence[int] | None = None
    ) -> Iterator[tuple[list[NDArray], int | None]]:
        for i in range(self.num_samples):
            label = self.class_labels[i] if self.class_labels is not None else None
            yield self.sample_maps(i, layer_ids), label

    def close(self) -> None:
        for fd in self._fds.values():
            os.close(fd)
        self._fds.clear()

    def __enter__(self) -> "FeaturePack":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self):  # best effort; explicit close preferred
        try:
            self.close()
        except Exception:
            pass


def write_feature_pack(
    root: str | Path,
    layers: Sequence[tuple[int, str, NDArray]],
    *,
    dataset_name: str,
    split: str,
    class_labels: Sequence[int] | None = None,
) -> Path:
    """Write (layer_id, name, (N, h, w, c) array) triples plus a manifest."""
    if len(layers) == 0:
        raise UsageError("a feature pack needs at least one layer")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    num_samples = int(np.asarray(layers[0][2]).shape[0])
    entries = []
    for layer_id, name, arr in layers:
        arr = np.asarray(arr)
        if arr.ndim != 4:
            raise UsageError(f"layer {layer_id}: expected (N, h, w, c), got shape {arr.shape}")
        if arr.shape[0] != num_samples:
            raise UsageError(
                f"layer {layer_id}: {arr.shape[0]} samples, other layers have {num_samples}"
            )
        fname = f"layer_{layer_id:04d}.npy"
        write_tensor_file(root / fname, arr)
        entries.append(
            {
                "layer_id": int(layer_id),
                "name": name,
                "channels": int(arr.shape[3]),
                "height": int(arr.shape[1]),
                "width": int(arr.shape[2]),
                "file": fname,
                "dtype": "<f4",
                "order": "C",
            }
        )
    manifest = {
        "format_version": MANIFEST_VERSION,
        "dataset_name": dataset_name,
        "split": split,
        "num_samples": num_samples,
        "layers": entries,
    }
    if class_labels is not None:
        if len(class_labels) != num_samples:
            raise UsageError(
                f"{len(class_labels)} labels for {num_samples} samples"
            )
        manifest["class_labels"] = [int(l) for l in class_labels]
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return root


# ---------------------------------------------------------------------------
# Model packs
# ---------------------------------------------------------------------------

_U64 = (1 << 64) - 1


def save_model(model: FittedModel, path: str | Path) -> None:
    """Serialise a fitted model; projections are regenerated, not stored."""
    model.validate()
    out = bytearray()
    flags = 1 if model.ensemble is not None else 0
    n_ens = len(model.ensemble.binding_seeds) if model.ensemble is not None else 0
    out += _MODEL_MAGIC
    out += struct.pack("<HH", MODEL_VERSION, flags)
    out += struct.pack("<IQ", model.hd_dim, model.master_seed & _U64)
    out += struct.pack("<B3x", _POOLING_CODES[model.pooling_mode])
    out += struct.pack(
        "<IIII", len(model.layer_ids), len(model.class_ids), n_ens, 0
    )
    for lid, ch, st in zip(model.layer_ids, model.layer_channels, model.layer_stats):
        out += struct.pack("<iII", lid, ch, st.count)
        out += np.ascontiguousarray(st.mean, dtype="<f8").tobytes()
    for cid, vec in zip(model.class_ids, model.class_descriptors):
        out += struct.pack("<i", cid)
        out += np.ascontiguousarray(vec, dtype="<f4").tobytes()
    if model.ensemble is not None:
        for seed in model.ensemble.binding_seeds:
            out += struct.pack("<Q", seed & _U64)
        for cid, vec in zip(model.class_ids, model.ensemble.class_descriptors):
            out += struct.pack("<i", cid)
            out += np.ascontiguousarray(vec, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


class _Cursor:
    def __init__(self, buf: bytes, path: Path):
        self.buf = buf
        self.path = path
        self.pos = 0

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise FormatError(
                f"{self.path}: truncated at offset {self.pos}, needed {size} more bytes"
            )
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def take_array(self, dtype: str, count: int) -> NDArray:
        size = count * np.dtype(dtype).itemsize
        if self.pos + size > len(self.buf):
            raise FormatError(
                f"{self.path}: truncated at offset {self.pos}, needed {size} more bytes"
            )
        arr = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.pos).copy()
        self.pos += size
        return arr


def load_model(path: str | Path) -> FittedModel:
    """Load a model pack, validating magic and version before parsing."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read: {exc}") from exc
    cur = _Cursor(raw, path)
    (magic,) = cur.take("<4s")
    if magic != _MODEL_MAGIC:
        raise FormatError(
            f"{path}: bad magic at offset 0: {magic!r}, expected {_MODEL_MAGIC!r}"
        )
    version, flags = cur.take("<HH")
    if version != MODEL_VERSION:
        raise FormatError(
            f"{path}: unsupported model version {version}, expected {MODEL_VERSION}"
        )
    hd_dim, master_seed = cur.take("<IQ")
    (pool_code,) = cur.take("<B3x")
    if pool_code not in _POOLING_NAMES:
        raise FormatError(f"{path}: unknown pooling code {pool_code}")
    n_layers, n_classes, n_ens, _ = cur.take("<IIII")
    layer_ids, channels, stats = [], [], []
    for _ in range(n_layers):
        lid, ch, count = cur.take("<iII")
        mean = cur.take_array("<f8", ch)
        layer_ids.append(lid)
        channels.append(ch)
        stats.append(LayerStats(mean=mean, count=count))
    class_ids = []
    descriptors = np.empty((n_classes, hd_dim), dtype=np.float32)
    for k in range(n_classes):
        (cid,) = cur.take("<i")
        class_ids.append(cid)
        descriptors[k] = cur.take_array("<f4", hd_dim)
    ensemble = None
    if flags & 1:
        seeds = tuple(cur.take("<Q")[0] for _ in range(n_ens))
        ens_desc = np.empty((n_classes, hd_dim), dtype=np.float32)
        for k in range(n_classes):
            (cid,) = cur.take("<i")
            if cid != class_ids[k]:
                raise FormatError(
                    f"{path}: ensemble class table order mismatch at offset {cur.pos}"
                )
            ens_desc[k] = cur.take_array("<f4", hd_dim)
        ensemble = EnsembleTable(binding_seeds=seeds, class_descriptors=ens_desc)
    if cur.pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - cur.pos} trailing bytes after model data")
    model = FittedModel(
        hd_dim=hd_dim,
        master_seed=master_seed,
        pooling_mode=_POOLING_NAMES[pool_code],
        layer_ids=layer_ids,
        layer_channels=channels,
        layer_stats=stats,
        class_ids=class_ids,
        class_descriptors=descriptors,
        ensemble=ensemble,
    )
    model.validate()
    return model

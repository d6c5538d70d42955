"""Feature-map extraction: forward hooks -> feature pack on disk.

Maps are dumped raw (pre-pooling, NHWC float32) so pooling choices stay
downstream; batches stream through per-layer append writers, so memory
stays bounded by one batch of activations regardless of dataset size.
Extraction runs in eval mode under no_grad and is deterministic for a
fixed checkpoint, dataset, and hook spec.
"""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn as nn

from .dataset import ImageFolder
from .errors import CheckpointError, DatasetError
from .hooks import HookSpec
from .packwriter import TensorFileWriter, write_manifest


def load_checkpoint(path: str | Path) -> nn.Module:
    """Load a pickled module checkpoint (torch.save of the whole model)."""
    try:
        obj = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"{path}: cannot load checkpoint: {exc}") from exc
    if isinstance(obj, nn.Module):
        model = obj
    elif isinstance(obj, dict) and isinstance(obj.get("model"), nn.Module):
        model = obj["model"]
    else:
        raise CheckpointError(
            f"{path}: checkpoint holds {type(obj).__name__}, expected a pickled nn.Module "
            "(torch.save(model) or {'model': model})"
        )
    model.eval()
    return model


def _as_nhwc(name: str, out: torch.Tensor) -> torch.Tensor:
    """Hook output as (B, h, w, c); vector outputs become 1x1 maps."""
    if not isinstance(out, torch.Tensor):
        raise DatasetError(f"hook {name}: module returned {type(out).__name__}, not a tensor")
    if out.dim() == 4:  # NCHW
        return out.permute(0, 2, 3, 1)
    if out.dim() == 2:  # (B, features)
        return out[:, None, None, :]
    raise DatasetError(f"hook {name}: unsupported output rank {out.dim()}")


def extract(
    checkpoint: str | Path,
    data_dir: str | Path,
    hook_spec: HookSpec | str,
    out_dir: str | Path,
    *,
    dataset_name: str = "",
    split: str = "",
    batch_size: int = 16,
    input_size: int | None = None,
    mean: tuple[float, ...] | None = None,
    std: tuple[float, ...] | None = None,
) -> Path:
    """Run the dataset through the checkpoint and write a feature pack."""
    model = load_checkpoint(checkpoint)
    spec = HookSpec.parse(hook_spec) if isinstance(hook_spec, str) else hook_spec
    resolved = spec.resolve(model)
    data = ImageFolder(data_dir, input_size=input_size, mean=mean, std=std)

    captured: dict[str, torch.Tensor] = {}

    def make_hook(name: str):
        def hook(_module, _inputs, output):
            captured[name] = output.detach()

        return hook

    handles = [mod.register_forward_hook(make_hook(name)) for _, name, mod in resolved]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writers: dict[int, TensorFileWriter] | None = None
    entries: list[dict] = []
    try:
        with torch.no_grad():
            for batch, _indices in data.batches(batch_size):
                captured.clear()
                model(batch)
                if writers is None:
                    writers = {}
                    for layer_id, name, _ in resolved:
                        if name not in captured:
                            raise DatasetError(
                                f"hook {name} never fired; module not on the forward path"
                            )
                        b, h, w, c = _as_nhwc(name, captured[name]).shape
                        fname = f"layer_{layer_id:04d}.npy"
                        writers[layer_id] = TensorFileWriter(
                            out_dir / fname, len(data), h, w, c
                        )
                        entries.append(
                            {
                                "layer_id": layer_id,
                                "name": name,
                                "channels": int(c),
                                "height": int(h),
                                "width": int(w),
                                "file": fname,
                                "dtype": "<f4",
                                "order": "C",
                            }
                        )
                for layer_id, name, _ in resolved:
                    writers[layer_id].append(
                        _as_nhwc(name, captured[name]).to(torch.float32).numpy()
                    )
        assert writers is not None
        for writer in writers.values():
            writer.close()
    finally:
        for handle in handles:
            handle.remove()
    write_manifest(
        out_dir,
        dataset_name=dataset_name or Path(data_dir).name,
        split=split or Path(out_dir).name,
        num_samples=len(data),
        layers=entries,
        class_labels=data.labels,
    )
    return out_dir

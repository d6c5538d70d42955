"""From per-layer feature maps to image, class, and ensemble descriptors.

The pipeline for one sample is pool -> mean-center -> project -> bundle:
each layer's (height, width, channels) map is reduced to a channel vector,
centered with the training-set mean for that layer, projected into the
shared m-dim space, and the per-layer results are summed into a single
image descriptor. Fitting bundles the descriptors of each class into one
class descriptor; scoring is the angle to the nearest class descriptor.

Fitting makes two passes: the first accumulates per-layer means, the
second builds descriptors from centered vectors. Work is split into
fixed-size chunks of samples; per-chunk partial sums are merged in chunk
order, so results are byte-identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .algebra import (
    ProjectionSet,
    bind,
    build_projection_set,
    bundle,
    random_rademacher,
)
from .errors import DimensionError, FitError, UsageError

__all__ = [
    "EnsembleTable",
    "FittedModel",
    "LayerStats",
    "center",
    "descriptor_for_sample",
    "descriptors_for_samples",
    "ensemble_descriptor",
    "ensemble_image_descriptor",
    "fit",
    "image_descriptor",
    "pool",
]

POOLING_MODES = ("max", "avg")

# Fixed scheduling unit: partial results are merged in chunk order, so the
# thread count never changes output bytes.
_CHUNK = 64


def pool(tensor: NDArray[np.floating], mode: str = "max") -> NDArray[np.floating]:
    """Reduce a (height, width, channels) map to one value per channel."""
    t = np.asarray(tensor)
    if t.ndim != 3:
        raise DimensionError(f"expected a (height, width, channels) map, got shape {t.shape}")
    if mode == "max":
        return t.max(axis=(0, 1))
    if mode == "avg":
        return t.mean(axis=(0, 1), dtype=np.float64).astype(t.dtype)
    raise UsageError(f"unknown pooling mode {mode!r}; expected one of {POOLING_MODES}")


@dataclass(frozen=True)
class LayerStats:
    """Per-layer training mean of pooled vectors (float64 accumulation)."""

    mean: NDArray[np.float64]
    count: int


def center(
    v: NDArray[np.floating], stats: LayerStats | NDArray[np.floating]
) -> NDArray[np.floating]:
    """Subtract the layer mean, element-wise, in the vector's own dtype.

    The mean is cast to v's dtype before subtracting so that centering
    commutes bit-exactly with max pooling (max(x) - k == max(x - k) for a
    channel constant k in the same float width).
    """
    v = np.asarray(v)
    mean = np.asarray(stats.mean if isinstance(stats, LayerStats) else stats)
    if mean.shape != v.shape:
        raise DimensionError(f"mean of shape {mean.shape} cannot center vector {v.shape}")
    return v - mean.astype(v.dtype, copy=False)


@dataclass(frozen=True)
class EnsembleTable:
    """Bound-and-bundled class descriptors across ensemble members."""

    binding_seeds: tuple[int, ...]
    class_descriptors: NDArray[np.float32]  # (C, m)


@dataclass
class FittedModel:
    """Everything needed to score new samples.

    Projection matrices are not stored; they regenerate bit-identically
    from (master_seed, layer_id, hd_dim, channels). Treat instances as
    immutable once fitted.
    """

    hd_dim: int
    master_seed: int
    pooling_mode: str
    layer_ids: list[int]
    layer_channels: list[int]
    layer_stats: list[LayerStats]
    class_ids: list[int]  # ascending; ties in scoring go to the lowest id
    class_descriptors: NDArray[np.float32]  # (C, hd_dim)
    ensemble: EnsembleTable | None = None
    _projections: ProjectionSet | None = field(default=None, repr=False, compare=False)

    def projections(self) -> ProjectionSet:
        """Regenerate (and cache) the per-layer projection matrices."""
        if self._projections is None:
            self._projections = build_projection_set(
                self.master_seed, self.hd_dim, list(zip(self.layer_ids, self.layer_channels))
            )
        return self._projections

    def validate(self) -> None:
        if self.hd_dim < 1:
            raise FitError(f"hd_dim must be >= 1, got {self.hd_dim}")
        if self.pooling_mode not in POOLING_MODES:
            raise FitError(f"unknown pooling mode {self.pooling_mode!r}")
        if not (len(self.layer_ids) == len(self.layer_channels) == len(self.layer_stats)):
            raise FitError("layer ids, channel counts and stats disagree in length")
        for lid, ch, st in zip(self.layer_ids, self.layer_channels, self.layer_stats):
            if st.mean.shape != (ch,):
                raise FitError(f"layer {lid}: mean length {st.mean.shape} != channels {ch}")
            if ch > self.hd_dim:
                raise FitError(f"layer {lid}: {ch} channels exceed hd_dim {self.hd_dim}")
        if self.class_descriptors.shape != (len(self.class_ids), self.hd_dim):
            raise FitError("class descriptor matrix shape disagrees with class ids/hd_dim")
        if list(self.class_ids) != sorted(self.class_ids):
            raise FitError("class ids must be stored in ascending order")
        norms = np.linalg.norm(self.class_descriptors.astype(np.float64), axis=1)
        for cid, n in zip(self.class_ids, norms):
            if not n > 0.0:
                raise FitError(
                    f"class {cid} has a zero-norm descriptor; with mean-centering this "
                    "happens when a class's pooled features equal the training mean "
                    "(e.g. a single training sample)"
                )


def image_descriptor(
    maps: Sequence[NDArray[np.floating]],
    stats: Sequence[LayerStats | NDArray[np.floating]] | None,
    projections: ProjectionSet,
    pooling_mode: str = "max",
) -> NDArray[np.floating]:
    """Bundle the projected, centered, pooled per-layer maps of one sample.

    ``maps`` must carry one entry per projection, in projection order.
    ``stats`` of None skips centering (all-zero means).
    """
    mats = projections.matrices
    if len(maps) != len(mats):
        raise DimensionError(
            f"got {len(maps)} layer maps, model expects {len(mats)} "
            f"(layers {[p.layer_id for p in mats]})"
        )
    acc: NDArray | None = None
    for idx, p in enumerate(mats):
        t = np.asarray(maps[idx])
        if t.ndim != 3 or t.shape[2] != p.channels:
            raise DimensionError(
                f"layer {p.layer_id}: map shape {t.shape} does not provide {p.channels} channels"
            )
        v = pool(t, pooling_mode)
        if stats is not None:
            v = center(v, stats[idx])
        h = p.entries @ v.astype(p.entries.dtype, copy=False)
        acc = h if acc is None else acc + h
    assert acc is not None
    return acc


def descriptor_for_sample(
    model: FittedModel, maps: Sequence[NDArray[np.floating]]
) -> NDArray[np.floating]:
    """Image descriptor for one sample using a fitted model's state."""
    return image_descriptor(maps, model.layer_stats, model.projections(), model.pooling_mode)


# ---------------------------------------------------------------------------
# Sample sources: adapt feature packs and in-memory lists to one interface.
# ---------------------------------------------------------------------------


class _Source:
    """Random access to per-sample maps for a fixed layer selection."""

    def __init__(self, n, labels, layer_ids, channels, getter):
        self.n = n
        self.labels = labels
        self.layer_ids = list(layer_ids)
        self.channels = list(channels)
        self._getter = getter

    def maps(self, i: int) -> list[NDArray]:
        return self._getter(i)


def _make_source(data, layer_ids: Sequence[int] | None = None) -> _Source:
    if hasattr(data, "read_map") and hasattr(data, "layer_ids"):  # FeaturePack
        pack = data
        selected = list(layer_ids) if layer_ids is not None else list(pack.layer_ids)
        missing = [lid for lid in selected if lid not in pack.layer_ids]
        if missing:
            raise DimensionError(f"pack is missing layer ids {missing}")
        channels = [pack.layer(lid).channels for lid in selected]
        return _Source(
            n=pack.num_samples,
            labels=pack.class_labels,
            layer_ids=selected,
            channels=channels,
            getter=lambda i: [pack.read_map(i, lid) for lid in selected],
        )
    samples = list(data)
    if not samples:
        raise UsageError("no training samples provided")
    first_maps, _ = samples[0]
    n_layers = len(first_maps)
    selected = list(layer_ids) if layer_ids is not None else list(range(n_layers))
    for lid in selected:
        if not 0 <= lid < n_layers:
            raise DimensionError(f"layer id {lid} out of range for {n_layers} in-memory layers")
    channels = [np.asarray(first_maps[lid]).shape[2] for lid in selected]
    labels = [lab for _, lab in samples]
    if any(lab is None for lab in labels):
        labels = None
    return _Source(
        n=len(samples),
        labels=labels,
        layer_ids=selected,
        channels=channels,
        getter=lambda i: [np.asarray(samples[i][0][lid]) for lid in selected],
    )


def _chunk_ranges(n: int) -> list[tuple[int, int]]:
    return [(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]


def _run_chunks(fn: Callable, ranges: Sequence[tuple[int, int]], threads: int) -> list:
    """Run fn over chunk ranges, returning results in chunk order."""
    if threads <= 1 or len(ranges) <= 1:
        return [fn(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        futures = [ex.submit(fn, r) for r in ranges]
        return [f.result() for f in futures]


def _check_sample_shapes(source: _Source, i: int, maps: Sequence[NDArray]) -> None:
    for lid, ch, t in zip(source.layer_ids, source.channels, maps):
        t = np.asarray(t)
        if t.ndim != 3 or t.shape[2] != ch:
            raise FitError(
                f"sample {i}, layer {lid}: map shape {t.shape} inconsistent with "
                f"{ch} channels"
            )


def _layer_means(source: _Source, pooling_mode: str, threads: int) -> list[LayerStats]:
    def job(rng: tuple[int, int]) -> list[NDArray[np.float64]]:
        sums = [np.zeros(ch, dtype=np.float64) for ch in source.channels]
        for i in range(*rng):
            maps = source.maps(i)
            _check_sample_shapes(source, i, maps)
            for k, t in enumerate(maps):
                sums[k] += pool(t, pooling_mode).astype(np.float64)
        return sums

    totals = [np.zeros(ch, dtype=np.float64) for ch in source.channels]
    for partial in _run_chunks(job, _chunk_ranges(source.n), threads):
        for k in range(len(totals)):
            totals[k] += partial[k]
    return [LayerStats(mean=s / source.n, count=source.n) for s in totals]


def fit(
    train,
    *,
    hd_dim: int = 10_000,
    master_seed: int = 0,
    pooling_mode: str = "max",
    layer_ids: Sequence[int] | None = None,
    class_ids: Sequence[int] | None = None,
    threads: int = 1,
) -> FittedModel:
    """Fit class descriptors from a labelled sample stream.

    ``train`` is a feature pack or a sequence of (maps, label) pairs; two
    passes are made, so the source must be re-readable. ``class_ids``
    optionally declares the expected classes; a declared class with no
    samples is an error.
    """
    if pooling_mode not in POOLING_MODES:
        raise UsageError(f"unknown pooling mode {pooling_mode!r}")
    master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF  # stored as u64 on disk
    source = _make_source(train, layer_ids)
    if source.labels is None:
        raise FitError("training data has no class labels")
    if source.n == 0:
        raise FitError("training data is empty")
    too_wide = [
        (lid, ch) for lid, ch in zip(source.layer_ids, source.channels) if ch > hd_dim
    ]
    if too_wide:
        raise DimensionError(
            f"hd_dim {hd_dim} is smaller than the channel count of layers {too_wide}; "
            "an orthogonal embedding needs hd_dim >= channels"
        )

    labels = [int(l) for l in source.labels]
    present = sorted(set(labels))
    if class_ids is not None:
        declared = sorted(int(c) for c in class_ids)
        missing = [c for c in declared if c not in present]
        if missing:
            raise FitError(f"declared classes with zero training samples: {missing}")
        classes = declared
    else:
        classes = present
    index_of = {c: k for k, c in enumerate(classes)}
    label_idx = [index_of[l] for l in labels]

    stats = _layer_means(source, pooling_mode, threads)
    projections = build_projection_set(
        master_seed, hd_dim, list(zip(source.layer_ids, source.channels))
    )

    def job(rng: tuple[int, int]) -> NDArray[np.float32]:
        part = np.zeros((len(classes), hd_dim), dtype=np.float32)
        for i in range(*rng):
            y = image_descriptor(source.maps(i), stats, projections, pooling_mode)
            part[label_idx[i]] += y
        return part

    descriptors = np.zeros((len(classes), hd_dim), dtype=np.float32)
    for partial in _run_chunks(job, _chunk_ranges(source.n), threads):
        descriptors += partial

    model = FittedModel(
        hd_dim=hd_dim,
        master_seed=master_seed,
        pooling_mode=pooling_mode,
        layer_ids=source.layer_ids,
        layer_channels=source.channels,
        layer_stats=stats,
        class_ids=classes,
        class_descriptors=descriptors,
        _projections=projections,
    )
    model.validate()
    return model


def descriptors_for_samples(
    model: FittedModel, data, *, threads: int = 1
) -> NDArray[np.float32]:
    """Image descriptors for every sample in a pack or sample list, (n, m).

    The source's layers must cover the model's layer selection with
    matching channel counts.
    """
    source = _make_source(data, model.layer_ids)
    for lid, ch_model, ch_src in zip(model.layer_ids, model.layer_channels, source.channels):
        if ch_model != ch_src:
            raise DimensionError(
                f"layer {lid}: pack has {ch_src} channels but the model was fitted "
                f"with {ch_model}"
            )
    projections = model.projections()
    out = np.empty((source.n, model.hd_dim), dtype=np.float32)

    def job(rng: tuple[int, int]) -> None:
        for i in range(*rng):
            out[i] = image_descriptor(
                source.maps(i), model.layer_stats, projections, model.pooling_mode
            )

    _run_chunks(job, _chunk_ranges(source.n), threads)
    return out


def ensemble_descriptor(
    members: Sequence[FittedModel], seeds: Sequence[int]
) -> FittedModel:
    """Combine member models' class descriptors into one ensemble model.

    Each member's descriptors are bound to a member-specific Rademacher
    vector (so members stay mutually distinguishable) and bundled class by
    class. The binding seeds are stored so test-time image descriptors can
    be bound the same way.
    """
    if len(members) == 0:
        raise UsageError("ensemble needs at least one member model")
    if len(seeds) != len(members):
        raise UsageError(f"got {len(members)} members but {len(seeds)} binding seeds")
    first = members[0]
    for k, mod in enumerate(members[1:], start=1):
        if mod.hd_dim != first.hd_dim:
            raise DimensionError(f"member {k} has hd_dim {mod.hd_dim}, expected {first.hd_dim}")
        if list(mod.class_ids) != list(first.class_ids):
            raise DimensionError(f"member {k} has a different class set")
    bound = []
    for mod, seed in zip(members, seeds):
        z = random_rademacher(int(seed), first.hd_dim)
        bound.append(mod.class_descriptors * z[np.newaxis, :])
    combined = bundle(bound).astype(np.float32)
    return replace(
        first,
        ensemble=EnsembleTable(
            binding_seeds=tuple(int(s) for s in seeds),
            class_descriptors=combined,
        ),
        _projections=first._projections,
    )


def ensemble_image_descriptor(
    per_model_y: Sequence[NDArray[np.floating]], model: FittedModel
) -> NDArray[np.floating]:
    """Bind each member's image descriptor with its stored seed and bundle."""
    if model.ensemble is None:
        raise UsageError("model carries no ensemble table")
    seeds = model.ensemble.binding_seeds
    if len(per_model_y) != len(seeds):
        raise UsageError(
            f"got {len(per_model_y)} member descriptors but {len(seeds)} stored seeds"
        )
    parts = [
        bind(np.asarray(y), random_rademacher(seed, model.hd_dim))
        for y, seed in zip(per_model_y, seeds)
    ]
    return bundle(parts)

"""Hyperdimensional vector algebra.

Operations on dense hypervectors (1-D numpy arrays, typically float32 at
m ~ 10^4 dimensions):

    - generate_semi_orthogonal: seeded inner-product-preserving projection
    - project:                  embed a channel vector into the HD space
    - bundle:                   element-wise sum, no normalisation
    - bind:                     Hadamard product (use with Rademacher vectors)
    - random_rademacher:        seeded +-1 vector
    - angle_degrees / cosine:   similarity in degrees / raw cosine

Vectors and matrices are stored in float32; dot products and angles
accumulate in float64 because float32 sums over 10^4 terms lose digits.
All functions are pure and safe to call from multiple threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateInputError, DimensionError, UsageError

__all__ = [
    "ProjectionMatrix",
    "ProjectionSet",
    "angle_degrees",
    "bind",
    "build_projection_set",
    "bundle",
    "cosine",
    "generate_semi_orthogonal",
    "layer_seed",
    "project",
    "random_rademacher",
    "splitmix64",
]

_U64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 finalizer round; maps any 64-bit int to a mixed one."""
    x &= _U64
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _U64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & _U64
    return x ^ (x >> 31)


def layer_seed(master_seed: int, layer_id: int) -> int:
    """Derive the projection seed for one layer from the master seed.

    Only (master_seed, layer_id) determine the seed, so a model file never
    needs to persist full matrices, and a single-layer run reuses exactly
    the projection that the all-layer run used for that layer.
    """
    return splitmix64((master_seed + (layer_id + 1) * _GOLDEN) & _U64)


@dataclass(frozen=True)
class ProjectionMatrix:
    """A seeded semi-orthogonal matrix embedding c channels into m dims.

    ``entries`` is (m, c) with entries.T @ entries = I_c, so inner products
    (and therefore cosines) survive the projection.
    """

    entries: NDArray[np.floating]
    layer_id: int
    seed: int

    @property
    def hd_dim(self) -> int:
        return self.entries.shape[0]

    @property
    def channels(self) -> int:
        return self.entries.shape[1]


def generate_semi_orthogonal(
    seed: int,
    m: int,
    c: int,
    *,
    layer_id: int = 0,
    dtype: np.dtype | type = np.float32,
) -> ProjectionMatrix:
    """Create a pseudo-random semi-orthogonal (m, c) matrix, m >= c.

    A Gaussian matrix is drawn from a counter-based Philox stream, QR-
    factorised, and each column of Q is flipped by the sign of the matching
    diagonal entry of R. The sign fix makes the factorisation unique, so
    the result is bit-reproducible from (seed, m, c) alone.
    """
    if m < c:
        raise DimensionError(
            f"cannot orthogonally embed {c} dims into fewer than {c} dims (m={m})"
        )
    if c < 1:
        raise UsageError(f"channel count must be >= 1, got {c}")
    rng = np.random.Generator(np.random.Philox(seed & _U64))
    gauss = rng.standard_normal((m, c), dtype=np.float64)
    q, r = np.linalg.qr(gauss, mode="reduced")
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs  # broadcast over columns
    return ProjectionMatrix(entries=np.ascontiguousarray(q.astype(dtype)), layer_id=layer_id, seed=seed)


@dataclass(frozen=True)
class ProjectionSet:
    """One projection matrix per layer, all sharing the target dimension."""

    matrices: tuple[ProjectionMatrix, ...]
    hd_dim: int
    master_seed: int
    by_layer: dict[int, ProjectionMatrix] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for p in self.matrices:
            if p.hd_dim != self.hd_dim:
                raise DimensionError(
                    f"layer {p.layer_id} projects into {p.hd_dim} dims, expected {self.hd_dim}"
                )
        object.__setattr__(self, "by_layer", {p.layer_id: p for p in self.matrices})


def build_projection_set(
    master_seed: int,
    hd_dim: int,
    layers: Sequence[tuple[int, int]],
    *,
    dtype: np.dtype | type = np.float32,
) -> ProjectionSet:
    """Generate the per-layer projections for (layer_id, channels) pairs."""
    mats = tuple(
        generate_semi_orthogonal(
            layer_seed(master_seed, lid), hd_dim, ch, layer_id=lid, dtype=dtype
        )
        for lid, ch in layers
    )
    return ProjectionSet(matrices=mats, hd_dim=hd_dim, master_seed=master_seed)


def project(p: ProjectionMatrix, v: NDArray[np.floating]) -> NDArray[np.floating]:
    """Embed a length-c vector into the m-dim space: entries @ v."""
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != p.channels:
        raise DimensionError(
            f"projection for layer {p.layer_id} expects length {p.channels}, got shape {v.shape}"
        )
    return p.entries @ v.astype(p.entries.dtype, copy=False)


def bundle(inputs: Sequence[NDArray[np.floating]]) -> NDArray[np.floating]:
    """Element-wise sum of the inputs, in input order, without truncation
    or normalisation. The result stays similar to every input."""
    if len(inputs) == 0:
        raise UsageError("cannot bundle an empty sequence")
    first = np.asarray(inputs[0])
    acc = first.copy()
    for i, v in enumerate(inputs[1:], start=1):
        v = np.asarray(v)
        if v.shape != first.shape:
            raise DimensionError(
                f"bundle input {i} has shape {v.shape}, expected {first.shape}"
            )
        acc += v
    return acc


def bind(a: NDArray[np.floating], b: NDArray[np.floating]) -> NDArray[np.floating]:
    """Hadamard product of two hypervectors.

    With b drawn from {-1, +1} the map x -> x * b is an isometry: any two
    vectors bound to the same b keep their dot product exactly, while the
    bound vector itself is quasi-orthogonal to the original.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"bind operands differ in shape: {a.shape} vs {b.shape}")
    return a * b


def random_rademacher(seed: int, m: int) -> NDArray[np.float32]:
    """Seeded i.i.d. uniform {-1, +1} vector of length m (float32)."""
    if m < 1:
        raise UsageError(f"dimension must be >= 1, got {m}")
    rng = np.random.Generator(np.random.Philox(seed & _U64))
    return (rng.integers(0, 2, size=m).astype(np.float32) * 2.0 - 1.0).astype(np.float32)


def cosine(a: NDArray[np.floating], b: NDArray[np.floating]) -> float:
    """Cosine similarity with float64 accumulation. Raises on zero norms."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cosine operands differ in shape: {a.shape} vs {b.shape}")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if not (na > 0.0 and nb > 0.0 and math.isfinite(na) and math.isfinite(nb)):
        raise DegenerateInputError(
            "cosine of a zero-norm or non-finite vector; an all-zero descriptor "
            "indicates a broken pipeline upstream"
        )
    return float(a @ b) / (na * nb)


def angle_degrees(a: NDArray[np.floating], b: NDArray[np.floating]) -> float:
    """Angle between two vectors in degrees, in [0, 180].

    The cosine is clamped to [-1, 1] first; float round-off can push it
    ~1e-7 past 1 for near-parallel vectors, which would NaN the arccos.
    """
    c = cosine(a, b)
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))

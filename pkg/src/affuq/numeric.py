"""Deterministic numerical primitives: activations, small linear-algebra
helpers, and seedable random streams.

Everything here is pure and reentrant.  All arrays are float64.  Random
streams are counter-based (Philox), so a given ``(seed, stream_id)`` pair
produces the same draw sequence on any host, independent of scheduling.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError

MAX_SEED = 2**64


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting higher ranks."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def softmax(z) -> np.ndarray:
    """Stabilized softmax: exponentials are taken after subtracting max(z).

    Output entries are non-negative and sum to 1 for any finite input,
    including magnitudes around 1e3 that would overflow a naive exp.
    """
    z = as_vector(z, "softmax input")
    if z.size == 0:
        raise InvalidInputError("softmax input must be non-empty")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax input contains non-finite entries")
    shifted = np.exp(z - z.max())
    return shifted / shifted.sum()


def relu(z) -> np.ndarray:
    """Elementwise max(0, z)."""
    return np.maximum(as_vector(z, "relu input"), 0.0)


def one_hot(class_id: int, num_classes: int) -> np.ndarray:
    """Indicator vector of length ``num_classes`` with a 1 at ``class_id``."""
    if num_classes < 1:
        raise InvalidInputError(f"num_classes must be >= 1, got {num_classes}")
    if not 0 <= class_id < num_classes:
        raise InvalidInputError(
            f"class_id {class_id} out of range [0, {num_classes})"
        )
    vec = np.zeros(num_classes, dtype=np.float64)
    vec[class_id] = 1.0
    return vec


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of two equal-length vectors."""
    a = as_vector(a, "hadamard lhs")
    b = as_vector(b, "hadamard rhs")
    if a.shape != b.shape:
        raise ShapeError(f"hadamard operands differ: {a.shape} vs {b.shape}")
    return a * b


def outer(a, b) -> np.ndarray:
    """Outer product matrix M[i, j] = a[i] * b[j]."""
    return np.outer(as_vector(a, "outer lhs"), as_vector(b, "outer rhs"))


def _feed(hasher, token: bytes) -> None:
    hasher.update(len(token).to_bytes(4, "little"))
    hasher.update(token)


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream.

    ``generator()`` always returns a fresh generator positioned at the start
    of the stream, so two calls with the same ``(seed, stream_id)`` replay
    bit-identical draws.  ``derive()`` produces child streams whose ids are
    mixed from the parent id and the given tags; distinct tag paths map to
    independent Philox streams under the same seed.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < MAX_SEED:
            raise InvalidInputError(f"seed must be in [0, 2**64), got {self.seed}")
        if self.stream_id < 0:
            raise InvalidInputError(f"stream_id must be >= 0, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))

    def derive(self, *tags: int | str) -> "RngStream":
        """Child stream identified by this stream's id plus ``tags``."""
        if not tags:
            raise InvalidInputError("derive() needs at least one tag")
        hasher = hashlib.blake2b(digest_size=8)
        _feed(hasher, str(self.stream_id).encode())
        for tag in tags:
            if isinstance(tag, str):
                _feed(hasher, b"s:" + tag.encode())
            elif isinstance(tag, (int, np.integer)):
                _feed(hasher, b"i:" + str(int(tag)).encode())
            else:
                raise InvalidInputError(f"stream tags must be int or str, got {type(tag)!r}")
        return RngStream(self.seed, int.from_bytes(hasher.digest(), "little"))

"""
Flat parameter vectors with a layer manifest.

A ``ParamSet`` is the unit the simulator serializes, aggregates and counts on
the communication ledger. Values are stored once as a read-only float64
vector; layer tensors are reshaped views into it. Two sets can be averaged
only when their manifests are identical.
"""
import hashlib
from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Sequence, Tuple

import numpy as np

from .errors import AggregationCompatibilityError, DimensionError

ROLES = ("kernel", "weight", "bias")


@dataclass(frozen=True)
class ParamEntry:
    layer: str
    role: str
    shape: Tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1


Manifest = Tuple[ParamEntry, ...]


def manifest_text(manifest: Sequence[ParamEntry]) -> str:
    """Canonical one-line rendering, e.g. ``conv1/kernel:16x3x3x3;conv1/bias:16``"""
    return ";".join(f"{e.layer}/{e.role}:{'x'.join(str(d) for d in e.shape)}" for e in manifest)


def manifest_digest(manifest: Sequence[ParamEntry]) -> bytes:
    return hashlib.sha256(manifest_text(manifest).encode("ascii")).digest()


def manifest_size(manifest: Sequence[ParamEntry]) -> int:
    return sum(e.size for e in manifest)


class ParamSet:
    """Immutable parameter vector; successors are built, never mutated in place"""

    __slots__ = ("values", "manifest", "_offsets")

    def __init__(self, values, manifest: Sequence[ParamEntry]):
        manifest = tuple(manifest)
        data = np.array(values, dtype=np.float64).ravel()
        expected = manifest_size(manifest)
        if data.size != expected:
            raise DimensionError(f"manifest describes {expected} values, got {data.size}")
        data.setflags(write=False)
        offsets: Dict[Tuple[str, str], Tuple[int, int]] = {}
        start = 0
        for entry in manifest:
            offsets[(entry.layer, entry.role)] = (start, start + entry.size)
            start += entry.size
        self.values = data
        self.manifest: Manifest = manifest
        self._offsets = offsets

    @classmethod
    def zeros(cls, manifest: Sequence[ParamEntry]) -> "ParamSet":
        return cls(np.zeros(manifest_size(manifest)), manifest)

    @classmethod
    def from_arrays(cls, manifest: Sequence[ParamEntry],
                    arrays: Mapping[Tuple[str, str], np.ndarray]) -> "ParamSet":
        """Pack per-layer arrays keyed by ``(layer, role)`` in manifest order"""
        parts = []
        for entry in manifest:
            array = np.asarray(arrays[(entry.layer, entry.role)], dtype=np.float64)
            if array.shape != entry.shape:
                raise DimensionError(
                    f"{entry.layer}/{entry.role}: expected shape {entry.shape}, got {array.shape}"
                )
            parts.append(array.ravel())
        values = np.concatenate(parts) if parts else np.zeros(0)
        return cls(values, manifest)

    def get(self, layer: str, role: str) -> np.ndarray:
        start, stop = self._offsets[(layer, role)]
        shape = next(e.shape for e in self.manifest if e.layer == layer and e.role == role)
        return self.values[start:stop].reshape(shape)

    def items(self) -> Iterator[Tuple[ParamEntry, np.ndarray]]:
        for entry in self.manifest:
            yield entry, self.get(entry.layer, entry.role)

    def compatible(self, other: "ParamSet") -> bool:
        return self.manifest == other.manifest

    def require_compatible(self, other: "ParamSet") -> None:
        if not self.compatible(other):
            raise AggregationCompatibilityError(
                f"manifest mismatch: [{manifest_text(self.manifest)}] vs [{manifest_text(other.manifest)}]"
            )

    def with_values(self, values) -> "ParamSet":
        return ParamSet(values, self.manifest)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamSet):
            return NotImplemented
        return bool(self.manifest == other.manifest and np.array_equal(self.values, other.values))

    __hash__ = None

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} values, {len(self.manifest)} tensors)"

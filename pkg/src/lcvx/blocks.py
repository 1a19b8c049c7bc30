"""Named decision blocks and flat-coordinate packing shared by the problem IRs.

Symmetric matrix blocks are flattened to their upper triangle (row major), so a
symmetric n x n block contributes n(n+1)/2 scalar coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("scalar", "vector", "matrix", "symmetric")


@dataclass(frozen=True)
class VariableBlock:
    """One named decision block: scalar, vector, m x n matrix or symmetric n x n."""

    name: str
    kind: str
    shape: tuple = ()
    box: tuple | None = None  # (lo, hi) bounds per scalar coordinate

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if self.kind == "scalar" and shape != ():
            raise ValueError("scalar blocks have empty shape")
        if self.kind == "vector" and (len(shape) != 1 or shape[0] < 1):
            raise ValueError("vector blocks need shape (k,) with k >= 1")
        if self.kind == "matrix" and (len(shape) != 2 or min(shape) < 1):
            raise ValueError("matrix blocks need shape (m, n)")
        if self.kind == "symmetric":
            if len(shape) != 2 or shape[0] != shape[1] or shape[0] < 1:
                raise ValueError("symmetric blocks need shape (n, n)")
        if self.box is not None:
            lo, hi = float(self.box[0]), float(self.box[1])
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid bounds box {self.box!r} on {self.name!r}")
            object.__setattr__(self, "box", (lo, hi))

    @property
    def size(self) -> int:
        if self.kind == "scalar":
            return 1
        if self.kind == "vector":
            return self.shape[0]
        if self.kind == "matrix":
            return self.shape[0] * self.shape[1]
        n = self.shape[0]
        return n * (n + 1) // 2

    def flatten(self, value) -> np.ndarray:
        """Structured value -> flat coordinates (upper triangle for symmetric)."""
        if self.kind == "scalar":
            return np.array([float(value)])
        arr = np.asarray(value, dtype=float)
        if arr.shape != self.shape:
            raise ValueError(f"block {self.name!r} expects shape {self.shape}, got {arr.shape}")
        if self.kind == "symmetric":
            sym = 0.5 * (arr + arr.T)
            iu = np.triu_indices(self.shape[0])
            return sym[iu].copy()
        return arr.reshape(-1).copy()

    def unflatten(self, coords):
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (self.size,):
            raise ValueError(f"block {self.name!r} expects {self.size} coordinates")
        if self.kind == "scalar":
            return float(coords[0])
        if self.kind == "vector":
            return coords.copy()
        if self.kind == "matrix":
            return coords.reshape(self.shape).copy()
        n = self.shape[0]
        out = np.zeros((n, n))
        iu = np.triu_indices(n)
        out[iu] = coords
        out.T[iu] = coords
        return out

    def basis_elements(self):
        """Yield the structured basis element for each flat coordinate.

        For symmetric blocks the off-diagonal basis is E_ij + E_ji, which makes
        linear maps through these elements carry the off-diagonal doubling.
        """
        if self.kind == "scalar":
            yield 1.0
            return
        if self.kind in ("vector", "matrix"):
            for k in range(self.size):
                e = np.zeros(self.size)
                e[k] = 1.0
                yield e.reshape(self.shape) if self.kind == "matrix" else e
            return
        n = self.shape[0]
        for i in range(n):
            for j in range(i, n):
                e = np.zeros((n, n))
                e[i, j] = 1.0
                e[j, i] = 1.0
                yield e


@dataclass(frozen=True)
class BlockLayout:
    """Ordered block collection with flat coordinate offsets."""

    blocks: tuple
    offsets: tuple = field(init=False)
    total: int = field(init=False)

    def __post_init__(self):
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate block names")
        offs, cum = [], 0
        for b in self.blocks:
            offs.append(cum)
            cum += b.size
        object.__setattr__(self, "offsets", tuple(offs))
        object.__setattr__(self, "total", cum)

    def __iter__(self):
        return iter(self.blocks)

    def get(self, name: str) -> VariableBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def coord_range(self, name: str) -> range:
        for b, off in zip(self.blocks, self.offsets):
            if b.name == name:
                return range(off, off + b.size)
        raise KeyError(name)

    def pack(self, assignment: dict) -> np.ndarray:
        v = np.zeros(self.total)
        for b, off in zip(self.blocks, self.offsets):
            if b.name not in assignment:
                raise KeyError(b.name)
            v[off:off + b.size] = b.flatten(assignment[b.name])
        return v

    def unpack(self, v) -> dict:
        v = np.asarray(v, dtype=float)
        out = {}
        for b, off in zip(self.blocks, self.offsets):
            out[b.name] = b.unflatten(v[off:off + b.size])
        return out

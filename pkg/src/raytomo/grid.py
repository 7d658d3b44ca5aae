"""Regular-grid scalar fields with spacing/origin metadata.

Axis convention (shared by every module): ``values`` is C-contiguous with
shape ``counts``; grid index ``(i0, ..., i_{dim-1})`` maps to the coordinate
``origin + spacing * (i0, ..., i_{dim-1})``, so the *first* coordinate axis
varies slowest in the flat array.  Flat node index of ``(i0, i1)`` on a 2D
grid is ``i0 * counts[1] + i1``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FIELD_KINDS = (
    "refractive-index",
    "sound-speed",
    "slowness",
    "absorption-coefficient",
)

_MAGIC = b"RTF1"


class OutsideDomainError(ValueError):
    """A sample point lies outside the grid domain (callers treat this as
    ray termination)."""


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a regular, isotropically spaced grid in 2 or 3 dimensions."""

    origin: tuple[float, ...]
    spacing: float
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if len(self.origin) != self.dim:
            raise ValueError("origin and counts disagree on dimension")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if any(c < 4 for c in self.counts):
            raise ValueError("every axis needs at least 4 samples (cubic stencil)")

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.counts))

    @property
    def extent(self) -> tuple[float, ...]:
        """Domain size per axis, ``(count - 1) * spacing``."""
        return tuple((c - 1) * self.spacing for c in self.counts)

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + e for o, e in zip(self.origin, self.extent))

    def axes(self) -> list[np.ndarray]:
        return [
            self.origin[k] + self.spacing * np.arange(self.counts[k])
            for k in range(self.dim)
        ]

    def node_coordinates(self) -> np.ndarray:
        """All node coordinates, shape ``(num_nodes, dim)`` in flat-index order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def to_index_space(self, x) -> np.ndarray:
        """Map physical coordinates to continuous grid-index coordinates."""
        return (np.asarray(x, dtype=float) - np.asarray(self.origin)) / self.spacing

    def contains(self, x, tol: float = 1e-9) -> np.ndarray | bool:
        """True where ``x`` lies inside the domain (closed, with tolerance)."""
        u = self.to_index_space(x)
        n = np.asarray(self.counts)
        ok = (u >= -tol) & (u <= (n - 1) + tol)
        return np.all(ok, axis=-1)

    def flat_index(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.counts)


@dataclass(frozen=True)
class ScalarField:
    """Scalar samples on a :class:`GridSpec`, tagged with a semantic kind."""

    spec: GridSpec
    values: np.ndarray
    kind: str = "refractive-index"

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        if v.size != self.spec.num_nodes:
            raise ValueError("value count does not match grid")
        v = v.reshape(self.spec.counts).copy()
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if self.kind in ("refractive-index", "sound-speed") and not np.all(v > 0):
            raise ValueError(f"{self.kind} values must be strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def is_homogeneous(self, rtol: float = 1e-12) -> bool:
        v = self.flat
        return float(np.ptp(v)) <= rtol * max(1.0, abs(float(v[0])))

    def with_values(self, values, kind: str | None = None) -> "ScalarField":
        return ScalarField(self.spec, values, kind or self.kind)


def grid_gradient(f: ScalarField) -> np.ndarray:
    """Nodal gradient, shape ``(dim, *counts)``.

    Central differences in the interior, one-sided at boundaries (numpy's
    ``gradient`` convention).
    """
    grads = np.gradient(f.values, f.spec.spacing, edge_order=1)
    if isinstance(grads, np.ndarray):
        grads = [grads]
    return np.stack(list(grads), axis=0)


# ---------------------------------------------------------------------------
# Binary field file: magic "RTF1", little-endian u32 dim, u32 counts[dim],
# f64 spacing, f64 origin[dim], f64 values row-major.
# ---------------------------------------------------------------------------


def save_field(path, f: ScalarField) -> None:
    spec = f.spec
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", spec.dim))
        fh.write(struct.pack(f"<{spec.dim}I", *spec.counts))
        fh.write(struct.pack("<d", spec.spacing))
        fh.write(struct.pack(f"<{spec.dim}d", *spec.origin))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def load_field(path, kind: str = "refractive-index") -> ScalarField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a field file (bad magic {magic!r})")
        (dim,) = struct.unpack("<I", fh.read(4))
        counts = struct.unpack(f"<{dim}I", fh.read(4 * dim))
        (spacing,) = struct.unpack("<d", fh.read(8))
        origin = struct.unpack(f"<{dim}d", fh.read(8 * dim))
        n = int(np.prod(counts))
        values = np.frombuffer(fh.read(8 * n), dtype="<f8", count=n)
    spec = GridSpec(origin, spacing, counts)
    return ScalarField(spec, values, kind)


def field_from_csv(path, spec: GridSpec, kind: str = "refractive-index") -> ScalarField:
    """Import a small field from CSV rows of grid-index tuples plus value."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[1] != spec.dim + 1:
        raise ValueError(f"expected {spec.dim + 1} columns, got {raw.shape[1]}")
    idx = raw[:, : spec.dim].astype(int)
    values = np.full(spec.counts, np.nan)
    values[tuple(idx.T)] = raw[:, spec.dim]
    if np.any(np.isnan(values)):
        raise ValueError("CSV does not cover every grid node")
    return ScalarField(spec, values, kind)


def field_to_csv(path, f: ScalarField) -> None:
    idx = np.indices(f.spec.counts).reshape(f.spec.dim, -1).T
    cols = [f"i{k}" for k in range(f.spec.dim)] + ["value"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row, v in zip(idx, f.flat):
            fh.write(",".join(str(i) for i in row) + f",{v:.17g}\n")

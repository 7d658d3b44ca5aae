"""Analytic phantoms and their exact reference quantities.

Variants: the Maxwell fish-eye refractive-index lens (rays are perfect
circles, used for validation), a homogeneous sound-speed background, and
weakly heterogeneous Gaussian-blob sound-speed maps for inversion tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, ScalarField


def fisheye_index(x, a: float = 1.0, n0: float = 1.0):
    """Fish-eye refractive index ``n0 / (1 + (||x||/a)**2)``."""
    if not a > 0:
        raise ValueError("scale a must be positive")
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    return n0 / (1.0 + r2 / (a * a))


def fisheye_gradient(x, a: float = 1.0, n0: float = 1.0):
    """Analytic gradient of the fish-eye index (oracle for interpolation tests)."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    return -2.0 * n0 * x / (a * a * (1.0 + r2 / (a * a)) ** 2)


@dataclass(frozen=True)
class Blob:
    """Gaussian sound-speed inclusion: amplitude * exp(-||x-c||^2 / (2 sigma^2))."""

    center: tuple[float, ...]
    radius: float  # sigma of the Gaussian profile
    amplitude: float  # additive sound-speed perturbation (m/s)


@dataclass(frozen=True)
class PhantomSpec:
    variant: str  # "fisheye" | "homogeneous" | "blobs"
    a: float = 1.0
    n0: float = 1.0
    c0: float = 1500.0
    blobs: tuple[Blob, ...] = ()

    def __post_init__(self):
        if self.variant not in ("fisheye", "homogeneous", "blobs"):
            raise ValueError(f"unknown phantom variant {self.variant!r}")
        if self.a <= 0 or self.n0 <= 0 or self.c0 <= 0:
            raise ValueError("a, n0 and c0 must be positive")

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.variant == "fisheye":
            return fisheye_index(x, self.a, self.n0)
        if self.variant == "homogeneous":
            return np.full(x.shape[:-1], self.c0)
        c = np.full(x.shape[:-1], self.c0)
        for b in self.blobs:
            d2 = np.sum((x - np.asarray(b.center)) ** 2, axis=-1)
            c = c + b.amplitude * np.exp(-d2 / (2.0 * b.radius**2))
        return c

    @property
    def kind(self) -> str:
        return "refractive-index" if self.variant == "fisheye" else "sound-speed"


def rasterize(phantom: PhantomSpec, spec: GridSpec) -> ScalarField:
    """Evaluate the analytic phantom at the grid nodes."""
    values = phantom.evaluate(spec.node_coordinates())
    return ScalarField(spec, values, phantom.kind)


@dataclass(frozen=True)
class FisheyeAnalytic:
    """Exact reference quantities for the fish-eye validation experiments."""

    R_true: float
    L_true: float
    start: tuple[float, ...]
    center: tuple[float, ...]
    end: tuple[float, ...]


def fisheye_reference(dim: int, a: float = 1.0, experiment: str = "radius") -> FisheyeAnalytic:
    """Expected circle radius, acoustic length and experiment geometry.

    radius experiment: start (0, a) / (0, 0, a), path center (a, 0) /
    (a, a, 0), all sampled points at distance ``sqrt(dim) * a`` from the
    center.  length experiment: rays from the start are intercepted at the
    conjugate point (0, -a) in 2D and back at the start in 3D, with exact
    acoustic length ``a (dim - 1) pi / 2``.
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if experiment not in ("radius", "length"):
        raise ValueError("experiment must be 'radius' or 'length'")
    R_true = math.sqrt(dim) * a
    L_true = a * (dim - 1) * math.pi / 2.0
    if dim == 2:
        start = (0.0, a)
        if experiment == "radius":
            center = (a, 0.0)
            end = start
        else:
            center = (0.0, 0.0)
            end = (0.0, -a)
    else:
        start = (0.0, 0.0, a)
        center = (a, a, 0.0)
        end = start
    return FisheyeAnalytic(R_true=R_true, L_true=L_true, start=start, center=center, end=end)

"""Fish-eye validation experiments.

Reproduces the accuracy protocol for the four ray integrators on the
Maxwell fish-eye lens: the mean radius deviation of the circular paths and
the mean acoustic length deviation against the analytic value, swept over
ray-to-grid spacing ratios.  The grid resolves one degree of angular
resolution along the unit-radius periphery (spacing 2 pi a / 360) and the
field is sampled with the cubic B-spline backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, ScalarField
from .interp import BSplineSampler
from .phantom import PhantomSpec, fisheye_reference, rasterize
from .tracer import (
    RayState,
    StepAlgorithm,
    StopCondition,
    TraceError,
    Trajectory,
    acoustic_length,
    snap_endpoint,
    trace,
    unit,
)

GRID_SPACING_PER_A = 2.0 * math.pi / 360.0  # one-degree angular resolution
DEFAULT_RATIOS = (4.0, 2.0, 1.0, 0.5, 0.25, 0.125)
N_AZIMUTHAL_RAYS_3D = 21
N_FAN_RAYS_2D = 101


@dataclass(frozen=True)
class ExperimentSpec:
    dim: int
    experiment: str  # "radius" | "length"
    algorithms: tuple = tuple(StepAlgorithm)
    ratios: tuple = (1.0,)
    a: float = 1.0
    n0: float = 1.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.experiment not in ("radius", "length"):
            raise ValueError("experiment must be 'radius' or 'length'")
        if any(r <= 0 for r in self.ratios):
            raise ValueError("ratios must be positive")
        object.__setattr__(
            self, "algorithms", tuple(StepAlgorithm(a) for a in self.algorithms)
        )


@dataclass(frozen=True)
class MetricResult:
    experiment: str
    algorithm: StepAlgorithm
    ratio: float
    metric: float  # RE_rd or RE_al, percent
    per_ray: np.ndarray
    ray_count: int
    failures: int


def fisheye_grid(dim: int, a: float = 1.0) -> GridSpec:
    """Validation grid at one-degree resolution, sized so the full circular
    trajectories (radius sqrt(dim) a, offset centers) stay inside."""
    h = GRID_SPACING_PER_A * a
    if dim == 2:
        half = 2.6 * a
        n = int(math.ceil(2 * half / h)) + 1
        return GridSpec(origin=(-half, -half), spacing=h, counts=(n, n))
    lo = np.array([-1.1, -1.1, -2.1]) * a
    hi = np.array([3.1, 3.1, 2.1]) * a
    counts = tuple(int(math.ceil((u - l) / h)) + 1 for l, u in zip(lo, hi))
    return GridSpec(origin=tuple(lo), spacing=h, counts=counts)


def fisheye_field(dim: int, a: float = 1.0, n0: float = 1.0) -> ScalarField:
    return rasterize(PhantomSpec("fisheye", a=a, n0=n0), fisheye_grid(dim, a))


def _rotate90(v):
    return np.array([-v[1], v[0]])


def radius_ray_starts(dim: int, a: float = 1.0):
    """Launch states of the radius experiment: one clockwise ray in 2D, 21
    azimuthal rays normal to the start-to-center axis in 3D."""
    ref = fisheye_reference(dim, a, "radius")
    p = np.asarray(ref.start)
    c = np.asarray(ref.center)
    axis = unit(c - p)
    if dim == 2:
        return ref, [RayState(p, _rotate90(axis))]
    zref = np.array([0.0, 0.0, 1.0])
    u = unit(np.cross(axis, zref))
    v = np.cross(axis, u)
    phis = 2 * np.pi * np.arange(N_AZIMUTHAL_RAYS_3D) / N_AZIMUTHAL_RAYS_3D
    return ref, [RayState(p, math.cos(f) * u + math.sin(f) * v) for f in phis]


def length_ray_starts(dim: int, a: float = 1.0):
    """Launch states of the length experiment: a 101-ray fan over
    [-pi/3, pi/3] about the start-to-center axis in 2D; the 21 azimuthal
    rays of the radius setup in 3D."""
    ref = fisheye_reference(dim, a, "length")
    p = np.asarray(ref.start)
    if dim == 2:
        axis = unit(np.asarray(ref.center) - p)  # (0, -1)
        base = math.atan2(axis[1], axis[0])
        thetas = np.linspace(-np.pi / 3, np.pi / 3, N_FAN_RAYS_2D)
        states = [
            RayState(p, np.array([math.cos(base + t), math.sin(base + t)]))
            for t in thetas
        ]
        return ref, states
    _, states = radius_ray_starts(dim, a)
    return ref, states


def radius_deviation(traj: Trajectory, center, R_true: float) -> float:
    """Per-ray mean absolute radius deviation over samples m = 1..M, percent."""
    d = np.linalg.norm(traj.positions[1:] - np.asarray(center), axis=1)
    return float(np.mean(np.abs(d - R_true) / R_true) * 100.0)


def radius_experiment(
    spec: ExperimentSpec,
    field: ScalarField | None = None,
    sampler: BSplineSampler | None = None,
    ratio: float | None = None,
    algorithm: StepAlgorithm | None = None,
) -> MetricResult:
    """Mean radius deviation RE_rd at one spacing ratio for one algorithm.

    Rays are traced until closing their loop (returning within one step of
    the start); non-closing rays are excluded from the mean but counted as
    failures.
    """
    ratio = ratio if ratio is not None else spec.ratios[0]
    algorithm = StepAlgorithm(algorithm or spec.algorithms[0])
    if sampler is None:
        sampler = BSplineSampler(field or fisheye_field(spec.dim, spec.a, spec.n0))
    h = sampler.spec.spacing
    ds = ratio * h
    ref, states = radius_ray_starts(spec.dim, spec.a)
    per_ray = []
    failures = 0
    max_steps = int(math.ceil(2 * math.pi * ref.R_true / ds)) * 2 + 16
    for state in states:
        traj = trace(
            state, ds, sampler, algorithm=algorithm,
            stop=StopCondition(max_steps=max_steps, closed_loop=True),
        )
        if traj.termination != "closed-loop":
            failures += 1
            continue
        per_ray.append(radius_deviation(traj, ref.center, ref.R_true))
    metric = float(np.mean(per_ray)) if per_ray else float("nan")
    return MetricResult(
        experiment="radius",
        algorithm=algorithm,
        ratio=ratio,
        metric=metric,
        per_ray=np.asarray(per_ray),
        ray_count=len(states),
        failures=failures,
    )


def length_experiment(
    spec: ExperimentSpec,
    field: ScalarField | None = None,
    sampler: BSplineSampler | None = None,
    ratio: float | None = None,
    algorithm: StepAlgorithm | None = None,
) -> MetricResult:
    """Mean (signed) acoustic length deviation RE_al at one spacing ratio.

    2D rays stop near the conjugate interception point, 3D rays after the
    full loop; the last point is snapped onto the exact interception point,
    which sets the final partial step of the trapezoidal quadrature.
    """
    ratio = ratio if ratio is not None else spec.ratios[0]
    algorithm = StepAlgorithm(algorithm or spec.algorithms[0])
    if field is None and sampler is None:
        field = fisheye_field(spec.dim, spec.a, spec.n0)
    if sampler is None:
        sampler = BSplineSampler(field)
    if field is None:
        field = sampler.field
    h = sampler.spec.spacing
    ds = ratio * h
    ref, states = length_ray_starts(spec.dim, spec.a)
    target = np.asarray(ref.end)
    max_steps = int(math.ceil(2 * math.pi * ref.R_true / ds)) * 2 + 16
    if spec.dim == 2:
        stop = StopCondition(max_steps=max_steps, target=target)
    else:
        stop = StopCondition(max_steps=max_steps, closed_loop=True)
    per_ray = []
    failures = 0
    for state in states:
        traj = trace(state, ds, sampler, algorithm=algorithm, stop=stop)
        if traj.termination not in ("receiver-capture", "closed-loop"):
            failures += 1
            continue
        try:
            snapped = snap_endpoint(traj, target)
        except TraceError:
            failures += 1
            continue
        L = acoustic_length(snapped, field, backend="bspline")
        per_ray.append((L - ref.L_true) / ref.L_true * 100.0)
    metric = float(np.mean(per_ray)) if per_ray else float("nan")
    return MetricResult(
        experiment="length",
        algorithm=algorithm,
        ratio=ratio,
        metric=metric,
        per_ray=np.asarray(per_ray),
        ray_count=len(states),
        failures=failures,
    )


def sweep(spec: ExperimentSpec, field: ScalarField | None = None) -> list[MetricResult]:
    """Metric table over all requested (algorithm, ratio) combinations,
    sharing one prefiltered field across the whole sweep."""
    sampler = BSplineSampler(field or fisheye_field(spec.dim, spec.a, spec.n0))
    run = radius_experiment if spec.experiment == "radius" else length_experiment
    out = []
    for algorithm in spec.algorithms:
        for ratio in spec.ratios:
            out.append(run(spec, sampler=sampler, ratio=ratio, algorithm=algorithm))
    return out


def sweep_to_csv(path, results: list[MetricResult]) -> None:
    with open(path, "w") as fh:
        fh.write("experiment,algorithm,ratio,metric_percent,ray_count,failures\n")
        for r in results:
            fh.write(
                f"{r.experiment},{r.algorithm.value},{r.ratio:.17g},"
                f"{r.metric:.17g},{r.ray_count},{r.failures}\n"
            )


def center_distance_csv(path, traj: Trajectory, center, every: int = 4) -> None:
    """Per-sample distance to the expected circle center, thinned to every
    4th step by default (trajectory-plot reproduction data)."""
    center = np.asarray(center, dtype=float)
    arc = traj.arc
    keep = list(range(0, traj.num_points, max(1, every)))
    with open(path, "w") as fh:
        fh.write("m,s,center_distance\n")
        for m in keep:
            d = float(np.linalg.norm(traj.positions[m] - center))
            fh.write(f"{m},{arc[m]:.17g},{d:.17g}\n")

"""Ray tracing on index-like fields.

Integrates the unit-speed ray equation d/ds(n dx/ds) = grad n from an
initial position and unit direction with one of four stepping algorithms,
accumulates acoustic length / travel time with the trapezoidal rule, and
scatters trajectory quadrature weights into sparse system-matrix rows.

The field handed to the tracer must be index-like (refractive index or
slowness): the curvature term (grad n - (grad n . d) d) / n is invariant
under constant rescaling of n, so slowness fields bend rays exactly as the
equivalent refractive index does.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grid import GridSpec, OutsideDomainError, ScalarField
from .interp import get_sampler, interp_weights


class StepAlgorithm(str, Enum):
    DUAL_UPDATE = "dual-update"
    MIXED_STEP = "mixed-step"
    CHARACTERISTICS = "characteristics"
    RUNGE_KUTTA_2 = "runge-kutta-2"  # Heun; the default


DEFAULT_ALGORITHM = StepAlgorithm.RUNGE_KUTTA_2

TERMINATIONS = ("boundary-exit", "closed-loop", "max-steps", "receiver-capture")


class TraceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Ordered off-grid ray samples.

    Consecutive samples are one nominal step ``ds`` apart except the final
    gap ``ds_last <= ds`` (set when the endpoint is snapped onto a target
    point; equal to ``ds`` otherwise).
    """

    positions: np.ndarray  # (M+1, dim)
    directions: np.ndarray  # (M+1, dim)
    ds: float
    ds_last: float
    termination: str

    def __post_init__(self):
        if self.termination not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.termination!r}")

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def gaps(self) -> np.ndarray:
        """Arc-length gap between consecutive samples."""
        m = self.num_points - 1
        if m <= 0:
            return np.zeros(0)
        g = np.full(m, self.ds)
        g[-1] = self.ds_last
        return g

    @property
    def arc(self) -> np.ndarray:
        """Cumulative arc length at each sample, starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.gaps)])

    @property
    def length(self) -> float:
        return float(self.arc[-1])


def unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True)
class RayState:
    x: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "d", unit(self.d))


def ray_rhs(value, gradient, d):
    """Unit-speed ray curvature f = (grad n - (grad n . d) d) / n.

    Works on single samples or batches (leading axis).
    """
    value = np.asarray(value, dtype=float)
    if np.any(value <= 0):
        raise ValueError("ray tracing requires a strictly positive index field")
    g = np.asarray(gradient, dtype=float)
    d = np.asarray(d, dtype=float)
    proj = np.sum(g * d, axis=-1, keepdims=True)
    return (g - proj * d) / value[..., None]


def _make_rhs(sampler):
    def rhs(x, d):
        v, g = sampler.value_and_gradient(x)
        return ray_rhs(v, g, d)

    return rhs


# ---------------------------------------------------------------------------
# stepping stencils (batched over a leading axis; also accept single states)
# ---------------------------------------------------------------------------


def _step_dual_update(x, d, ds, rhs):
    # direction first from the current-point gradient; position advanced
    # along the mean of both directions
    dn = unit(d + ds * rhs(x, d))
    return x + 0.5 * ds * (d + dn), dn


def _step_mixed_step(x, d, ds, rhs):
    xn = x + ds * d
    dn = unit(d + ds * rhs(xn, d))
    return xn, dn


def _step_characteristics(x, d, ds, rhs):
    f = rhs(x, d)
    xn = x + ds * d + 0.5 * ds * ds * f
    dn = unit(d + ds * f)
    return xn, dn


def _step_rk2(x, d, ds, rhs):
    f1 = rhs(x, d)
    xp = x + ds * d
    dp = unit(d + ds * f1)
    f2 = rhs(xp, dp)
    dn = unit(d + 0.5 * ds * (f1 + f2))
    xn = x + 0.5 * ds * (d + dp)
    return xn, dn


_STEPPERS = {
    StepAlgorithm.DUAL_UPDATE: _step_dual_update,
    StepAlgorithm.MIXED_STEP: _step_mixed_step,
    StepAlgorithm.CHARACTERISTICS: _step_characteristics,
    StepAlgorithm.RUNGE_KUTTA_2: _step_rk2,
}


def step(state: RayState, ds: float, sampler, algorithm=DEFAULT_ALGORITHM) -> RayState:
    """Advance one ray state by one step; raises :class:`OutsideDomainError`
    when sampling leaves the domain (callers treat it as boundary exit)."""
    algorithm = StepAlgorithm(algorithm)
    xn, dn = _STEPPERS[algorithm](state.x, state.d, ds, _make_rhs(sampler))
    return RayState(xn, dn)


@dataclass(frozen=True)
class StopCondition:
    """Trace termination rules.

    Boundary exit always terminates.  Optional rules: closed-loop return to
    the start (armed only after arc length exceeds ``2 ds``), capture near a
    target point (stop once the distance to the target dips below
    ``2 ds`` and starts growing again, so the closest sample is kept), and
    interception of a circular/spherical detection surface (stop once the
    distance to the surface center reaches the radius, from inside).
    """

    max_steps: int = 200_000
    closed_loop: bool = False
    target: np.ndarray | None = None
    surface_center: np.ndarray | None = None
    surface_radius: float | None = None


def trace(
    start: RayState,
    ds: float,
    field_or_sampler,
    algorithm=DEFAULT_ALGORITHM,
    stop: StopCondition | None = None,
    backend: str = "bspline",
) -> Trajectory:
    """Integrate an initial value problem, sampling every ``ds``."""
    sampler = (
        field_or_sampler
        if hasattr(field_or_sampler, "value_and_gradient")
        else get_sampler(field_or_sampler, backend)
    )
    stop = stop or StopCondition()
    algorithm = StepAlgorithm(algorithm)
    stepper = _STEPPERS[algorithm]
    rhs = _make_rhs(sampler)
    spec = sampler.spec

    x0 = np.asarray(start.x, dtype=float)
    xs = [x0]
    dirs = [unit(start.d)]
    termination = "max-steps"
    target = None if stop.target is None else np.asarray(stop.target, dtype=float)
    prev_target_dist = None
    center = (
        None
        if stop.surface_center is None
        else np.asarray(stop.surface_center, dtype=float)
    )

    for m in range(stop.max_steps):
        try:
            xn, dn = stepper(xs[-1], dirs[-1], ds, rhs)
        except OutsideDomainError:
            termination = "boundary-exit"
            break
        if not spec.contains(xn):
            termination = "boundary-exit"
            break
        xs.append(xn)
        dirs.append(dn)
        arc = (len(xs) - 1) * ds
        if stop.closed_loop and arc > 2 * ds:
            if np.linalg.norm(xn - x0) < ds:
                termination = "closed-loop"
                break
        if target is not None:
            dist = float(np.linalg.norm(xn - target))
            if (
                prev_target_dist is not None
                and prev_target_dist < 2 * ds
                and dist > prev_target_dist
            ):
                termination = "receiver-capture"
                break
            prev_target_dist = dist
        if center is not None and len(xs) > 2:
            if np.linalg.norm(xn - center) >= stop.surface_radius:
                termination = "receiver-capture"
                break

    return Trajectory(
        positions=np.asarray(xs),
        directions=np.asarray(dirs),
        ds=float(ds),
        ds_last=float(ds),
        termination=termination,
    )


def snap_endpoint(traj: Trajectory, target) -> Trajectory:
    """Replace the trajectory tail with the exact target point.

    Keeps samples up to the one closest to ``target`` and appends the target
    itself, producing the final partial gap ``ds_last < ds``.  Fails when the
    whole trajectory misses the target neighborhood by more than ``2 ds``.
    """
    target = np.asarray(target, dtype=float)
    dist = np.linalg.norm(traj.positions - target, axis=1)
    # walk back from the tail to the local closest approach near the end
    # (global argmin would pick the launch point of a loop ray whose target
    # is its own start)
    i = traj.num_points - 1
    while i > 0 and dist[i - 1] < dist[i]:
        i -= 1
    if dist[i] > 2 * traj.ds:
        raise TraceError(
            f"trajectory misses target by {dist[i]:.3g} (> 2 ds = {2 * traj.ds:.3g})"
        )
    # when the closest sample already overshot the target, cut one sample
    # earlier so the final hop continues forward instead of doubling back
    while i > 0 and np.dot(target - traj.positions[i], traj.directions[i]) < 0:
        i -= 1
    if dist[i] < 1e-12 and i > 0:
        # already lands on the target; just relabel the final gap
        i -= 1
    pos = np.vstack([traj.positions[: i + 1], target])
    last_dir = unit(target - traj.positions[i]) if dist[i] > 1e-12 else traj.directions[i]
    dirs = np.vstack([traj.directions[: i + 1], last_dir])
    return Trajectory(
        positions=pos,
        directions=dirs,
        ds=traj.ds,
        ds_last=float(np.linalg.norm(target - traj.positions[i])),
        termination="receiver-capture",
    )


def straight_trajectory(start, end, ds: float) -> Trajectory:
    """Straight polyline from start to end with step ds and a final partial
    step (used for homogeneous-medium short-circuits)."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    dist = float(np.linalg.norm(end - start))
    if dist <= 0:
        raise ValueError("start and end coincide")
    d = (end - start) / dist
    n_full = int(np.floor(dist / ds - 1e-12))
    s = np.arange(max(n_full, 0) + 1) * ds
    pos = start[None, :] + s[:, None] * d[None, :]
    ds_last = dist - max(n_full, 0) * ds
    if n_full >= 1 and ds_last < 1e-12 * max(1.0, dist):
        pos[-1] = end
        ds_last = ds
    else:
        pos = np.vstack([pos, end])
    dirs = np.tile(d, (len(pos), 1))
    return Trajectory(pos, dirs, float(ds), float(ds_last), "receiver-capture")


# ---------------------------------------------------------------------------
# quadrature along trajectories (trapezoidal rule with a final partial step)
# ---------------------------------------------------------------------------


def quadrature_weights(traj: Trajectory) -> np.ndarray:
    """Per-sample trapezoidal weights: ds/2 at the first sample, ds in the
    interior, (ds + ds')/2 and ds'/2 at the two final samples."""
    g = traj.gaps
    w = np.zeros(traj.num_points)
    if len(g) == 0:
        return w
    w[:-1] += 0.5 * g
    w[1:] += 0.5 * g
    return w


def _integrand(traj: Trajectory, field: ScalarField, mode: str, backend: str):
    sampler = get_sampler(field, backend)
    vals, _ = sampler.value_and_gradient(traj.positions)
    vals = np.atleast_1d(vals)
    if mode == "value":
        return vals
    if mode == "reciprocal":
        return 1.0 / vals
    raise ValueError(mode)


def acoustic_length(traj: Trajectory, field: ScalarField, backend: str = "bspline") -> float:
    """Trapezoidal accumulation of the index-like field along the ray."""
    if field.kind == "sound-speed":
        raise ValueError("acoustic length needs an index-like field, not sound speed")
    vals = _integrand(traj, field, "value", backend)
    return float(np.dot(quadrature_weights(traj), vals))


def travel_time(traj: Trajectory, field: ScalarField, backend: str = "bilinear") -> float:
    """Trapezoidal accumulation of slowness along the ray.

    Accepts either a sound-speed field (integrand 1/c) or a slowness field
    (integrand is the value itself).
    """
    if field.kind == "sound-speed":
        vals = _integrand(traj, field, "reciprocal", backend)
    elif field.kind == "slowness":
        vals = _integrand(traj, field, "value", backend)
    else:
        raise ValueError(f"travel time undefined for field kind {field.kind!r}")
    return float(np.dot(quadrature_weights(traj), vals))


def travel_time_samples(traj: Trajectory, field: ScalarField, backend: str = "bilinear") -> np.ndarray:
    """Cumulative travel time at every trajectory sample (T(s_0)=0)."""
    if field.kind == "sound-speed":
        vals = _integrand(traj, field, "reciprocal", backend)
    elif field.kind == "slowness":
        vals = _integrand(traj, field, "value", backend)
    else:
        raise ValueError(f"travel time undefined for field kind {field.kind!r}")
    g = traj.gaps
    seg = 0.5 * g * (vals[:-1] + vals[1:])
    return np.concatenate([[0.0], np.cumsum(seg)])


@dataclass(frozen=True)
class SparseRow:
    """Path-length contributions of grid nodes to one ray (units: meters)."""

    indices: np.ndarray
    coefficients: np.ndarray

    def dot(self, nodal_values: np.ndarray) -> float:
        return float(np.dot(self.coefficients, np.asarray(nodal_values).reshape(-1)[self.indices]))

    @property
    def row_sum(self) -> float:
        return float(self.coefficients.sum())


def system_row(traj: Trajectory, spec: GridSpec, backend: str = "bilinear") -> SparseRow:
    """Scatter each sample's trapezoidal weight onto its interpolation
    stencil, yielding one sparse system-matrix row."""
    qw = quadrature_weights(traj)
    stencils = interp_weights(spec, traj.positions, backend)
    if traj.num_points == 1:
        stencils = [stencils]
    idx_parts = []
    coef_parts = []
    for wq, (idx, w) in zip(qw, stencils):
        idx_parts.append(idx)
        coef_parts.append(wq * w)
    idx_all = np.concatenate(idx_parts)
    coef_all = np.concatenate(coef_parts)
    uniq, inv = np.unique(idx_all, return_inverse=True)
    coefs = np.zeros(len(uniq))
    np.add.at(coefs, inv, coef_all)
    return SparseRow(indices=uniq, coefficients=coefs)


def dump_trajectory_csv(path, traj: Trajectory, every: int = 1) -> None:
    """Write (sample index, arc length, coordinates) rows, optionally thinned
    to every k-th sample (the final sample is always kept)."""
    arc = traj.arc
    keep = list(range(0, traj.num_points, max(1, every)))
    if keep[-1] != traj.num_points - 1:
        keep.append(traj.num_points - 1)
    cols = ["m", "s"] + [f"x{k + 1}" for k in range(traj.dim)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for m in keep:
            vals = [str(m), f"{arc[m]:.17g}"] + [f"{c:.17g}" for c in traj.positions[m]]
            fh.write(",".join(vals) + "\n")

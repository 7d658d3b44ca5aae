"""Ray Jacobians and ray-approximated Green's-function parameters.

A paraxial ray is the first-order perturbation (dx, dd) of a reference ray
under a small change of the initial direction.  It is integrated along the
stored reference trajectory with Heun steps, using the analytic B-spline
Hessian of the index field.  The ray Jacobian follows from the paraxial
solutions and feeds the geometric-spreading amplitude through the
transport-equation invariant A_geom^2 * n * J = const along a ray tube.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import ScalarField
from .interp import BSplineSampler, get_sampler
from .linking import direction_from_angles
from .tracer import (
    RayState,
    StopCondition,
    Trajectory,
    trace,
    travel_time_samples,
    quadrature_weights,
    unit,
)


class UnsupportedBackendError(TypeError):
    pass


class CausticError(ValueError):
    pass


@dataclass(frozen=True)
class ParaxialState:
    """Perturbed positions and unit directions along the reference ray."""

    dx: np.ndarray  # (M+1, dim)
    dd: np.ndarray  # (M+1, dim)

    @property
    def num_points(self) -> int:
        return self.dx.shape[0]


def _perturbation_matrices(n, g, H, d):
    """Coefficients of the linearized ray system at one reference sample.

    d(dx)/ds = dd,  d(dd)/ds = A dx + B dd, with A the projected normalized
    Hessian term and B the direction-coupling term of the curvature
    f = (I - d d^T) grad(n) / n.
    """
    dim = len(d)
    eye = np.eye(dim)
    P = eye - np.outer(d, d)
    A = P @ (H / n - np.outer(g, g) / n**2)
    B = -(np.outer(d, g) + np.dot(g, d) * eye) / n
    return A, B


def trace_paraxial(
    reference: Trajectory,
    field_or_sampler,
    dd0=None,
    dx0=None,
) -> ParaxialState:
    """Integrate the paraxial system along a reference trajectory.

    Point-source initialization: dx(0) = 0 and dd(0) a unit angular
    perturbation orthogonal to the launch direction (the default picks the
    in-plane normal in 2D).  Requires a Hessian-capable (B-spline) backend.
    """
    sampler = (
        field_or_sampler
        if hasattr(field_or_sampler, "value_and_gradient")
        else get_sampler(field_or_sampler, "bspline")
    )
    if not getattr(sampler, "has_hessian", False):
        raise UnsupportedBackendError(
            "paraxial tracing needs the B-spline backend (analytic Hessians)"
        )
    pos = reference.positions
    dirs = reference.directions
    m_pts = len(pos)
    dim = pos.shape[1]

    d0 = dirs[0]
    if dd0 is None:
        dd0 = perpendicular_basis(d0)[0]
    dd = np.asarray(dd0, dtype=float)
    dx = np.zeros(dim) if dx0 is None else np.asarray(dx0, dtype=float)

    vals, grads, hess = sampler.value_and_gradient(pos, with_hessian=True)
    gaps = reference.gaps

    out_dx = np.empty((m_pts, dim))
    out_dd = np.empty((m_pts, dim))
    out_dx[0], out_dd[0] = dx, dd

    mats = [
        _perturbation_matrices(vals[m], grads[m], hess[m], dirs[m])
        for m in range(m_pts)
    ]
    for m in range(m_pts - 1):
        h = gaps[m]
        A0, B0 = mats[m]
        A1, B1 = mats[m + 1]
        # Heun on the time-varying linear system
        k1x = dd
        k1d = A0 @ dx + B0 @ dd
        xp = dx + h * k1x
        dp = dd + h * k1d
        k2x = dp
        k2d = A1 @ xp + B1 @ dp
        dx = dx + 0.5 * h * (k1x + k2x)
        dd = dd + 0.5 * h * (k1d + k2d)
        # linearized renormalization: keep dd orthogonal to the unit direction
        dnext = dirs[m + 1]
        dd = dd - np.dot(dd, dnext) * dnext
        out_dx[m + 1], out_dd[m + 1] = dx, dd
    return ParaxialState(dx=out_dx, dd=out_dd)


def perpendicular_basis(d) -> list[np.ndarray]:
    """One (2D) or two (3D) unit vectors orthogonal to d."""
    d = unit(d)
    if len(d) == 2:
        return [np.array([-d[1], d[0]])]
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = unit(np.cross(d, ref))
    v = np.cross(d, u)
    return [u, v]


def ray_jacobian_paraxial(paraxial, reference: Trajectory) -> np.ndarray:
    """Signed ray Jacobian along the reference ray.

    2D: component of dx orthogonal to the local direction (one paraxial
    solution).  3D: signed cross-sectional area spanned by two independent
    paraxial solutions (pass a sequence of two states).
    """
    dirs = reference.directions
    if reference.dim == 2:
        if isinstance(paraxial, (list, tuple)):
            paraxial = paraxial[0]
        perp = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1)
        return np.sum(paraxial.dx * perp, axis=1)
    if not isinstance(paraxial, (list, tuple)) or len(paraxial) != 2:
        raise ValueError("3D ray Jacobian needs two independent paraxial solutions")
    p1, p2 = paraxial
    cross = np.cross(p1.dx, p2.dx)
    return np.sum(cross * dirs, axis=1)


def ray_jacobian_for_ray(reference: Trajectory, field_or_sampler) -> np.ndarray:
    """Paraxial ray Jacobian with default point-source initialization."""
    sampler = (
        field_or_sampler
        if hasattr(field_or_sampler, "value_and_gradient")
        else get_sampler(field_or_sampler, "bspline")
    )
    basis = perpendicular_basis(reference.directions[0])
    states = [trace_paraxial(reference, sampler, dd0=b) for b in basis]
    return ray_jacobian_paraxial(states if len(states) > 1 else states[0], reference)


def ray_jacobian_auxiliary(
    field_or_sampler,
    start,
    angles,
    ds: float,
    delta_theta: float = math.radians(0.5),
    algorithm="runge-kutta-2",
    stop: StopCondition | None = None,
):
    """Ray Jacobian from independently traced auxiliary rays.

    The initial launch angles are perturbed by +-delta_theta (2D: two
    auxiliary rays, central difference; 3D: one forward-perturbed ray per
    angle) and the Jacobian is the finite-difference transverse separation
    at matched arc lengths.  Returns (reference trajectory, J array); the
    J array is truncated to the shortest ray when an auxiliary exits early.
    """
    sampler = (
        field_or_sampler
        if hasattr(field_or_sampler, "value_and_gradient")
        else get_sampler(field_or_sampler, "bspline")
    )
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    dim = 2 if len(angles) == 1 else 3
    stop = stop or StopCondition()

    def run(a):
        return trace(
            RayState(start, direction_from_angles(a, dim)), ds, sampler,
            algorithm=algorithm, stop=stop,
        )

    ref = run(angles)
    if dim == 2:
        plus = run(angles + delta_theta)
        minus = run(angles - delta_theta)
        m = min(ref.num_points, plus.num_points, minus.num_points)
        sep = (plus.positions[:m] - minus.positions[:m]) / (2 * delta_theta)
        perp = np.stack([-ref.directions[:m, 1], ref.directions[:m, 0]], axis=1)
        jac = np.sum(sep * perp, axis=1)
    else:
        aux1 = run(angles + np.array([delta_theta, 0.0]))
        aux2 = run(angles + np.array([0.0, delta_theta]))
        m = min(ref.num_points, aux1.num_points, aux2.num_points)
        d1 = (aux1.positions[:m] - ref.positions[:m]) / delta_theta
        d2 = (aux2.positions[:m] - ref.positions[:m]) / delta_theta
        jac = np.sum(np.cross(d1, d2) * ref.directions[:m], axis=1)
    return ref, jac


# ---------------------------------------------------------------------------
# Green's-function parameters along a ray
# ---------------------------------------------------------------------------


def geometric_amplitude(jacobian: np.ndarray, n_values: np.ndarray, s_ref_index: int) -> np.ndarray:
    """Transport-equation amplitude, normalized to 1 at the reference sample.

    A_geom(s) = sqrt(n(s_ref) J(s_ref) / (n(s) J(s))); samples where J
    vanishes (caustics) come out infinite and are flagged by the caustic
    count, not regularized.
    """
    jac = np.abs(np.asarray(jacobian, dtype=float))
    n_values = np.asarray(n_values, dtype=float)
    ref = n_values[s_ref_index] * jac[s_ref_index]
    if ref == 0:
        raise CausticError("reference sample sits on a caustic (J = 0)")
    with np.errstate(divide="ignore"):
        return np.sqrt(ref / (n_values * jac))


def caustic_count(jacobian: np.ndarray) -> np.ndarray:
    """Cumulative number of sign changes of the signed Jacobian."""
    j = np.asarray(jacobian, dtype=float)
    sign = np.sign(j)
    # carry the last nonzero sign through exact zeros
    for m in range(1, len(sign)):
        if sign[m] == 0:
            sign[m] = sign[m - 1]
    flips = np.zeros(len(j), dtype=int)
    flips[1:] = (sign[1:] * sign[:-1] < 0).astype(int)
    return np.cumsum(flips)


def accumulate_phase(times: np.ndarray, omega: float, kappa: np.ndarray | int = 0) -> np.ndarray:
    """Phase phi(s) = omega T(s) - kappa(s) pi/2 (KMAH caustic shift)."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    return omega * np.asarray(times, dtype=float) - np.asarray(kappa) * (np.pi / 2.0)


def accumulate_absorption(
    traj: Trajectory, alpha0_field: ScalarField, y: float, omega: float,
    backend: str = "bspline",
) -> np.ndarray:
    """Power-law absorption amplitude A_abs(s) = exp(-omega^y * int alpha0 ds).

    alpha0 carries units Np (rad/s)^(-y) / m; y is the tissue exponent
    (typically 1 < y <= 1.5).
    """
    sampler = get_sampler(alpha0_field, backend)
    vals, _ = sampler.value_and_gradient(traj.positions)
    vals = np.atleast_1d(vals)
    if np.any(vals < 0):
        raise ValueError("absorption coefficient must be nonnegative")
    g = traj.gaps
    seg = 0.5 * g * (vals[:-1] + vals[1:])
    integral = np.concatenate([[0.0], np.cumsum(seg)])
    return np.exp(-(omega**y) * integral)


@dataclass(frozen=True)
class GreensParams:
    """Per-arc-length Green's-function parameters of one ray."""

    trajectory: Trajectory
    times: np.ndarray  # T(s), seconds
    jacobian: np.ndarray  # signed ray Jacobian J(s)
    amp_geometric: np.ndarray  # A_geom(s), 1 at the reference sample
    attenuation: np.ndarray  # int alpha0 ds, per sample
    kappa: np.ndarray  # cumulative caustic count
    omega: float
    power_law_y: float
    s_ref_index: int

    @property
    def amp_absorption(self) -> np.ndarray:
        return np.exp(-(self.omega**self.power_law_y) * self.attenuation)

    @property
    def phase(self) -> np.ndarray:
        return accumulate_phase(self.times, self.omega, self.kappa)

    def value(self, index: int) -> complex:
        """Ray-approximated Green's-function value at sample ``index``."""
        if self.jacobian[index] == 0 or not np.isfinite(self.amp_geometric[index]):
            raise CausticError(
                "sample lies on a caustic; evaluate at a neighboring sample"
            )
        amp = self.amp_geometric[index] * self.amp_absorption[index]
        return amp * complex(math.cos(self.phase[index]), math.sin(self.phase[index]))

    def to_csv(self, path) -> None:
        arc = self.trajectory.arc
        cols = ["s", "T", "J", "A_geom", "alpha_integral", "kappa"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for m in range(len(arc)):
                fh.write(
                    f"{arc[m]:.17g},{self.times[m]:.17g},{self.jacobian[m]:.17g},"
                    f"{self.amp_geometric[m]:.17g},{self.attenuation[m]:.17g},"
                    f"{int(self.kappa[m])}\n"
                )


def greens_value(params: GreensParams, index: int) -> complex:
    return params.value(index)


def compute_greens_params(
    traj: Trajectory,
    index_field: ScalarField,
    omega: float,
    y: float = 1.1,
    alpha0_field: ScalarField | None = None,
    sound_speed_field: ScalarField | None = None,
    s_ref: float | None = None,
) -> GreensParams:
    """Assemble Green's parameters along a (linked) ray.

    ``index_field`` drives the Jacobian/transport amplitude; travel times
    come from ``sound_speed_field`` when given, else from ``index_field``
    treated as slowness.  The geometric amplitude is normalized at arc
    length ``s_ref`` (default: one grid spacing from the source).
    """
    sampler = BSplineSampler(index_field)
    jac = ray_jacobian_for_ray(traj, sampler)
    nvals, _ = sampler.value_and_gradient(traj.positions)
    nvals = np.atleast_1d(nvals)
    if s_ref is None:
        s_ref = index_field.spec.spacing
    s_ref_index = int(np.argmin(np.abs(traj.arc - s_ref)))
    if s_ref_index == 0 and traj.num_points > 1:
        s_ref_index = 1
    amp = geometric_amplitude(jac, nvals, s_ref_index)
    if sound_speed_field is not None:
        times = travel_time_samples(traj, sound_speed_field, backend="bspline")
    elif index_field.kind == "slowness":
        times = travel_time_samples(traj, index_field, backend="bspline")
    else:
        # refractive index relative to unit reference speed: T = acoustic length
        g = traj.gaps
        seg = 0.5 * g * (nvals[:-1] + nvals[1:])
        times = np.concatenate([[0.0], np.cumsum(seg)])
    if alpha0_field is not None:
        a_sampler = get_sampler(alpha0_field, "bspline")
        avals, _ = a_sampler.value_and_gradient(traj.positions)
        avals = np.atleast_1d(avals)
        if np.any(avals < 0):
            raise ValueError("absorption coefficient must be nonnegative")
        seg = 0.5 * traj.gaps * (avals[:-1] + avals[1:])
        attenuation = np.concatenate([[0.0], np.cumsum(seg)])
    else:
        attenuation = np.zeros(traj.num_points)
    return GreensParams(
        trajectory=traj,
        times=times,
        jacobian=jac,
        amp_geometric=amp,
        attenuation=attenuation,
        kappa=caustic_count(jac),
        omega=omega,
        power_law_y=y,
        s_ref_index=s_ref_index,
    )


def reverse_ray(params: GreensParams, index_field: ScalarField) -> GreensParams:
    """Backward Green's parameters along the reversed linked ray.

    Positions are reversed and directions negated; accumulated travel time
    and attenuation are re-referenced to the receiver end; the paraxial ray
    is re-traced along the reversed path for the backward Jacobian.
    """
    traj = params.trajectory
    rev = Trajectory(
        positions=traj.positions[::-1].copy(),
        directions=-traj.directions[::-1].copy(),
        ds=traj.ds,
        ds_last=traj.ds,
        termination=traj.termination,
    )
    # the reversed gap sequence starts with the old partial step; rebuild a
    # trajectory whose quadrature sees the true gaps by reusing arc data
    sampler = BSplineSampler(index_field)
    jac = ray_jacobian_for_ray(rev, sampler)
    nvals, _ = sampler.value_and_gradient(rev.positions)
    nvals = np.atleast_1d(nvals)
    t_total = params.times[-1]
    a_total = params.attenuation[-1]
    times = t_total - params.times[::-1]
    attenuation = a_total - params.attenuation[::-1]
    s_ref_index = min(params.s_ref_index, rev.num_points - 1)
    amp = geometric_amplitude(jac, nvals, s_ref_index)
    return GreensParams(
        trajectory=rev,
        times=times,
        jacobian=jac,
        amp_geometric=amp,
        attenuation=attenuation,
        kappa=caustic_count(jac),
        omega=params.omega,
        power_law_y=params.power_law_y,
        s_ref_index=s_ref_index,
    )

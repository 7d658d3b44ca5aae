"""Two-point ray linking by shooting.

The ray's initial direction is parameterized in the angular domain (one
launch angle in 2D, azimuth/polar in 3D) and adjusted until the ray's
interception with the detection circle/sphere hits the receiver.  The
residual is expressed in angular coordinates of the interception point
relative to the receiver, as seen from the array center.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import ScalarField
from .interp import get_sampler
from .tracer import (
    DEFAULT_ALGORITHM,
    StepAlgorithm,
    RayState,
    StopCondition,
    Trajectory,
    _STEPPERS,
    _make_rhs,
    snap_endpoint,
    straight_trajectory,
    trace,
    unit,
)


class LinkError(RuntimeError):
    pass


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return -((-np.asarray(a) + np.pi) % (2 * np.pi) - np.pi)


def direction_from_angles(angles, dim: int) -> np.ndarray:
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if dim == 2:
        return np.array([math.cos(angles[0]), math.sin(angles[0])])
    phi, theta = angles
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def angles_from_direction(d) -> np.ndarray:
    d = unit(d)
    if len(d) == 2:
        return np.array([math.atan2(d[1], d[0])])
    return np.array([math.atan2(d[1], d[0]), math.acos(np.clip(d[2], -1, 1))])


def straight_aim(emitter, receiver) -> np.ndarray:
    """Launch angles of the straight line from emitter to receiver."""
    return angles_from_direction(np.asarray(receiver, float) - np.asarray(emitter, float))


# ---------------------------------------------------------------------------
# transducer geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArrayGeometry:
    """Emitter/receiver positions on a ring (2D) or sphere (3D)."""

    layout: str  # "ring" | "sphere"
    center: np.ndarray
    radius: float
    emitters: np.ndarray  # (N_e, dim)
    receivers: np.ndarray  # (N_r, dim)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "emitters", np.asarray(self.emitters, dtype=float))
        object.__setattr__(self, "receivers", np.asarray(self.receivers, dtype=float))
        if self.layout not in ("ring", "sphere"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if len(self.emitters) < 2 or len(self.receivers) < 2:
            raise ValueError("need at least 2 emitters and 2 receivers")
        for pts in (self.emitters, self.receivers):
            r = np.linalg.norm(pts - self.center, axis=1)
            if not np.allclose(r, self.radius, rtol=1e-9, atol=1e-12 * self.radius):
                raise ValueError("all transducers must lie on the detection surface")

    @property
    def dim(self) -> int:
        return self.emitters.shape[1]

    def pairs(self) -> list[tuple[int, int]]:
        """All emitter-receiver pairs with distinct positions."""
        out = []
        for e in range(len(self.emitters)):
            for r in range(len(self.receivers)):
                if np.linalg.norm(self.emitters[e] - self.receivers[r]) > 1e-12:
                    out.append((e, r))
        return out


def ring_array(n_emitters: int, radius: float, center=(0.0, 0.0), n_receivers: int | None = None) -> ArrayGeometry:
    center = np.asarray(center, dtype=float)
    ang_e = 2 * np.pi * np.arange(n_emitters) / n_emitters
    emitters = center + radius * np.stack([np.cos(ang_e), np.sin(ang_e)], axis=1)
    if n_receivers is None:
        receivers = emitters
    else:
        ang_r = 2 * np.pi * np.arange(n_receivers) / n_receivers
        receivers = center + radius * np.stack([np.cos(ang_r), np.sin(ang_r)], axis=1)
    return ArrayGeometry("ring", center, radius, emitters, receivers)


def sphere_array(n_emitters: int, radius: float, center=(0.0, 0.0, 0.0), n_receivers: int | None = None) -> ArrayGeometry:
    """Fibonacci-lattice transducers on a sphere."""
    center = np.asarray(center, dtype=float)

    def fib(n):
        i = np.arange(n) + 0.5
        polar = np.arccos(1 - 2 * i / n)
        az = np.pi * (1 + math.sqrt(5.0)) * i
        return center + radius * np.stack(
            [np.sin(polar) * np.cos(az), np.sin(polar) * np.sin(az), np.cos(polar)],
            axis=1,
        )

    emitters = fib(n_emitters)
    receivers = emitters if n_receivers is None else fib(n_receivers)
    return ArrayGeometry("sphere", center, radius, emitters, receivers)


# ---------------------------------------------------------------------------
# link problem / residual
# ---------------------------------------------------------------------------


@dataclass
class LinkProblem:
    emitter: np.ndarray
    receiver: np.ndarray
    sampler: object  # field sampler (interp backend already chosen)
    center: np.ndarray
    radius: float
    ds: float
    tau: float  # interception-to-receiver tolerance (meters)
    algorithm: StepAlgorithm = DEFAULT_ALGORITHM
    max_iterations: int = 20
    max_steps: int | None = None

    def __post_init__(self):
        self.emitter = np.asarray(self.emitter, dtype=float)
        self.receiver = np.asarray(self.receiver, dtype=float)
        self.center = np.asarray(self.center, dtype=float)
        if not self.tau > 0:
            raise ValueError("tolerance tau must be positive")
        if np.linalg.norm(self.emitter - self.receiver) <= 1e-12:
            raise ValueError("emitter and receiver coincide")
        if self.max_steps is None:
            self.max_steps = int(np.ceil(4 * np.pi * self.radius / self.ds)) + 8

    @property
    def dim(self) -> int:
        return len(self.emitter)


def make_problem(field: ScalarField, geometry: ArrayGeometry, e: int, r: int,
                 ds: float | None = None, tau: float | None = None,
                 backend: str = "bilinear", algorithm=DEFAULT_ALGORITHM,
                 max_iterations: int | None = None) -> LinkProblem:
    h = field.spec.spacing
    return LinkProblem(
        emitter=geometry.emitters[e],
        receiver=geometry.receivers[r],
        sampler=get_sampler(field, backend),
        center=geometry.center,
        radius=geometry.radius,
        ds=ds if ds is not None else h,
        tau=tau if tau is not None else h,
        algorithm=StepAlgorithm(algorithm),
        max_iterations=max_iterations or (20 if field.spec.dim == 2 else 30),
    )


@dataclass(frozen=True)
class LinkResult:
    angles: np.ndarray
    trajectory: Trajectory | None
    residual: np.ndarray  # angular miss (radians); 1-vector in 2D, 2-vector in 3D
    iterations: int
    converged: bool
    emitter_id: int = -1
    receiver_id: int = -1

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))


def _surface_angles(q, center, dim):
    v = np.asarray(q, float) - center
    if dim == 2:
        return np.array([math.atan2(v[1], v[0])])
    r = np.linalg.norm(v)
    return np.array(
        [math.atan2(v[1], v[0]), math.asin(np.clip(v[2] / r, -1, 1))]
    )  # (azimuth, elevation)


def _interception(traj: Trajectory, center, radius):
    """Exact surface crossing point from the last trajectory segment."""
    if traj.termination != "receiver-capture" or traj.num_points < 2:
        return None
    a = traj.positions[-2] - center
    b = traj.positions[-1] - center
    dv = b - a
    aa = float(np.dot(dv, dv))
    bb = 2 * float(np.dot(a, dv))
    cc = float(np.dot(a, a)) - radius**2
    disc = bb * bb - 4 * aa * cc
    if disc < 0 or aa == 0:
        return traj.positions[-1]
    t = (-bb + math.sqrt(disc)) / (2 * aa)
    t = min(max(t, 0.0), 1.0)
    return center + a + t * dv


def link_residual(angles, problem: LinkProblem):
    """Trace from the emitter and return (miss vector, trajectory,
    interception point).  The miss is non-finite when the ray never reaches
    the detection surface."""
    d0 = direction_from_angles(angles, problem.dim)
    stop = StopCondition(
        max_steps=problem.max_steps,
        surface_center=problem.center,
        surface_radius=problem.radius,
    )
    traj = trace(
        RayState(problem.emitter, d0), problem.ds, problem.sampler,
        algorithm=problem.algorithm, stop=stop,
    )
    q = _interception(traj, problem.center, problem.radius)
    n_angles = problem.dim - 1
    if q is None:
        return np.full(n_angles, np.nan), traj, None
    qa = _surface_angles(q, problem.center, problem.dim)
    ra = _surface_angles(problem.receiver, problem.center, problem.dim)
    miss = qa - ra
    miss[0] = wrap_angle(miss[0])
    return miss, traj, q


def _finalize(problem: LinkProblem, angles, traj, q, iterations, converged, e=-1, r=-1):
    miss_dist = np.inf if q is None else float(np.linalg.norm(q - problem.receiver))
    ok = converged and miss_dist <= problem.tau
    final_traj = traj
    if ok:
        try:
            final_traj = snap_endpoint(traj, problem.receiver)
        except Exception:
            ok = False
    qa = (
        np.full(problem.dim - 1, np.nan)
        if q is None
        else _surface_angles(q, problem.center, problem.dim)
        - _surface_angles(problem.receiver, problem.center, problem.dim)
    )
    if q is not None:
        qa[0] = wrap_angle(qa[0])
    return LinkResult(
        angles=np.atleast_1d(np.asarray(angles, float)),
        trajectory=final_traj,
        residual=qa,
        iterations=iterations,
        converged=ok,
        emitter_id=e,
        receiver_id=r,
    )


def _miss_distance(q, receiver):
    return np.inf if q is None else float(np.linalg.norm(q - receiver))


# ---------------------------------------------------------------------------
# generic root helpers (also exercised directly by synthetic oracles)
# ---------------------------------------------------------------------------


def secant_root(fun, x0: float, x1: float, tol: float = 1e-12, max_iterations: int = 60):
    """Scalar secant iteration; returns (root, iterations)."""
    f0, f1 = fun(x0), fun(x1)
    for it in range(1, max_iterations + 1):
        if abs(f1) <= tol:
            return x1, it - 1
        denom = f1 - f0
        if abs(denom) < 1e-14:
            x1 += 1e-7
            f1 = fun(x1)
            denom = f1 - f0
            if abs(denom) < 1e-14:
                raise LinkError("secant breakdown: flat residual")
        x2 = x1 - f1 * (x1 - x0) / denom
        x0, f0, x1 = x1, f1, x2
        f1 = fun(x1)
    return x1, max_iterations


def regula_falsi_root(fun, lo: float, hi: float, tol: float = 1e-12, max_iterations: int = 60):
    """False-position iteration on a bracketing interval."""
    flo, fhi = fun(lo), fun(hi)
    if flo * fhi > 0:
        raise LinkError("residuals at bracket ends have the same sign")
    x, fx = lo, flo
    for it in range(1, max_iterations + 1):
        x = hi - fhi * (hi - lo) / (fhi - flo)
        fx = fun(x)
        if abs(fx) <= tol or (hi - lo) <= tol:
            return x, it
        if flo * fx < 0:
            hi, fhi = x, fx
        else:
            lo, flo = x, fx
    return x, max_iterations


def broyden_root(fun, u0, B0=None, tol: float = 1e-12, max_iterations: int = 30):
    """Good-Broyden rank-1 root finder for small vector residuals.

    One residual evaluation per update; the Jacobian estimate is refreshed
    from the two most recent iterates and reset to the initialization when
    it turns singular.
    """
    u = np.asarray(u0, dtype=float).copy()
    n = len(u)
    B_init = np.eye(n) if B0 is None else np.asarray(B0, dtype=float)
    B = B_init.copy()
    f = np.asarray(fun(u), dtype=float)
    for it in range(1, max_iterations + 1):
        if np.linalg.norm(f) <= tol:
            return u, it - 1
        try:
            du = -np.linalg.solve(B, f)
        except np.linalg.LinAlgError:
            B = B_init.copy()
            du = -np.linalg.solve(B, f)
        un = u + du
        fn = np.asarray(fun(un), dtype=float)
        df = fn - f
        denom = float(np.dot(du, du))
        if denom > 0:
            B = B + np.outer(df - B @ du, du) / denom
        u, f = un, fn
    return u, max_iterations


# ---------------------------------------------------------------------------
# single-pair linking
# ---------------------------------------------------------------------------

SECANT_SECOND_SEED = math.radians(0.5)
REGULA_FALSI_HALF_BRACKET = math.radians(10.0)
AUX_MAGNIFICATION = 2.0  # inscribed-angle launch-to-interception slope on a circle


def link_secant(problem: LinkProblem, angles0=None, angles1=None, e=-1, r=-1) -> LinkResult:
    """Secant iteration on the scalar angular miss (2D default)."""
    if problem.dim != 2:
        raise ValueError("secant linking is the 2D solver")
    t0 = float((straight_aim(problem.emitter, problem.receiver) if angles0 is None else np.atleast_1d(angles0))[0])
    m0, traj0, q0 = link_residual([t0], problem)
    if _miss_distance(q0, problem.receiver) <= problem.tau:
        return _finalize(problem, [t0], traj0, q0, 0, True, e, r)
    t1 = t0 + SECANT_SECOND_SEED if angles1 is None else float(np.atleast_1d(angles1)[0])
    m1, traj1, q1 = link_residual([t1], problem)
    it = 1
    f0, f1 = float(m0[0]), float(m1[0])
    while it < problem.max_iterations:
        if _miss_distance(q1, problem.receiver) <= problem.tau:
            return _finalize(problem, [t1], traj1, q1, it, True, e, r)
        denom = f1 - f0
        if not np.isfinite(denom) or abs(denom) < 1e-14:
            t1 += 1e-6
            m1, traj1, q1 = link_residual([t1], problem)
            f1 = float(m1[0])
            denom = f1 - f0
            if not np.isfinite(denom) or abs(denom) < 1e-14:
                return _finalize(problem, [t1], traj1, q1, it, False, e, r)
        t2 = t1 - f1 * wrap_angle(t1 - t0) / denom
        t0, f0 = t1, f1
        t1 = float(wrap_angle(t2))
        m1, traj1, q1 = link_residual([t1], problem)
        f1 = float(m1[0])
        it += 1
    ok = _miss_distance(q1, problem.receiver) <= problem.tau
    return _finalize(problem, [t1], traj1, q1, it, ok, e, r)


def link_regula_falsi(problem: LinkProblem, bracket=None, e=-1, r=-1) -> LinkResult:
    """False-position linking on a bracketing angle interval (2D).

    The default bracket is the straight-aim angle +- 10 degrees, doubled up
    to 3 times if the residuals do not change sign.
    """
    if problem.dim != 2:
        raise ValueError("regula falsi linking is the 2D solver")
    aim = float(straight_aim(problem.emitter, problem.receiver)[0])
    if bracket is None:
        half = REGULA_FALSI_HALF_BRACKET
        lo, hi = aim - half, aim + half
    else:
        lo, hi = (float(np.atleast_1d(b)[0]) for b in bracket)
    evals: dict[float, tuple] = {}

    def g(t):
        if t not in evals:
            evals[t] = link_residual([t], problem)
        return float(evals[t][0][0])

    expansions = 0
    while g(lo) * g(hi) > 0:
        if bracket is not None or expansions >= 3:
            raise LinkError("no sign change across the launch-angle bracket")
        half = (hi - lo)  # double the bracket
        lo, hi = aim - half, aim + half
        expansions += 1

    flo, fhi = g(lo), g(hi)
    it = 0
    x = lo
    while it < problem.max_iterations:
        x = hi - fhi * (hi - lo) / (fhi - flo)
        fx = g(x)
        it += 1
        m, traj, q = evals[x]
        if _miss_distance(q, problem.receiver) <= problem.tau or (hi - lo) < 1e-14:
            return _finalize(problem, [x], traj, q, it, True, e, r)
        if flo * fx < 0:
            hi, fhi = x, fx
        else:
            lo, flo = x, fx
    m, traj, q = evals[x]
    ok = _miss_distance(q, problem.receiver) <= problem.tau
    return _finalize(problem, [x], traj, q, it, ok, e, r)


def link_broyden(problem: LinkProblem, angles0=None, e=-1, r=-1) -> LinkResult:
    """Broyden-like linking for 3D problems: one traced ray per update."""
    if problem.dim != 3:
        raise ValueError("Broyden linking is the 3D solver")
    u = np.asarray(
        straight_aim(problem.emitter, problem.receiver) if angles0 is None else angles0,
        dtype=float,
    ).copy()
    B_init = AUX_MAGNIFICATION * np.eye(2)
    B = B_init.copy()
    m, traj, q = link_residual(u, problem)
    it = 0
    best = (u.copy(), traj, q)
    while it < problem.max_iterations:
        if _miss_distance(q, problem.receiver) <= problem.tau:
            return _finalize(problem, u, traj, q, it, True, e, r)
        if not np.all(np.isfinite(m)):
            return _finalize(problem, *best, it, False, e, r)
        try:
            du = -np.linalg.solve(B, m)
        except np.linalg.LinAlgError:
            B = B_init.copy()
            du = -np.linalg.solve(B, m)
        un = u + du
        mn, traj, q = link_residual(un, problem)
        it += 1
        if np.all(np.isfinite(mn)):
            denom = float(np.dot(du, du))
            if denom > 0:
                B = B + np.outer(mn - m - B @ du, du) / denom
        u, m = un, mn
        if q is not None:
            best = (u.copy(), traj, q)
    ok = _miss_distance(q, problem.receiver) <= problem.tau
    return _finalize(problem, u, traj, q, it, ok, e, r)


# ---------------------------------------------------------------------------
# whole-array linking
# ---------------------------------------------------------------------------


@dataclass
class LinkTable:
    geometry: ArrayGeometry
    results: list[LinkResult]

    def __iter__(self):
        return iter(self.results)

    def __len__(self):
        return len(self.results)

    @property
    def converged_mask(self) -> np.ndarray:
        return np.array([res.converged for res in self.results])

    @property
    def convergence_rate(self) -> float:
        return float(np.mean(self.converged_mask))

    def angle_table(self) -> np.ndarray:
        """Converged launch angles for warm-starting the next linearization."""
        return np.stack([res.angles for res in self.results])

    def to_csv(self, path, field: ScalarField | None = None, backend: str = "bilinear") -> None:
        from .tracer import acoustic_length as _al, travel_time as _tt

        dim = self.geometry.dim
        ang_cols = ["theta"] if dim == 2 else ["phi", "theta"]
        cols = ["emitter_id", "receiver_id", *ang_cols, "iterations", "converged",
                "residual_norm", "travel_time_s", "acoustic_length_m"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for res in self.results:
                tt = al = float("nan")
                if field is not None and res.converged and res.trajectory is not None:
                    if field.kind in ("sound-speed", "slowness"):
                        tt = _tt(res.trajectory, field, backend)
                    if field.kind in ("refractive-index", "slowness"):
                        al = _al(res.trajectory, field, backend)
                vals = [str(res.emitter_id), str(res.receiver_id)]
                vals += [f"{a:.17g}" for a in res.angles]
                vals += [str(res.iterations), str(int(res.converged)),
                         f"{res.residual_norm:.17g}", f"{tt:.17g}", f"{al:.17g}"]
                fh.write(",".join(vals) + "\n")


def _check_margin(field: ScalarField, geometry: ArrayGeometry, ds: float) -> None:
    lo = np.asarray(field.spec.origin)
    hi = np.asarray(field.spec.upper)
    c = geometry.center
    need = geometry.radius + 2 * ds
    if np.any(c - need < lo) or np.any(c + need > hi):
        raise LinkError(
            "grid domain must extend at least 2 steps beyond the detection surface"
        )


def link_all(
    geometry: ArrayGeometry,
    field: ScalarField,
    ds: float | None = None,
    tau: float | None = None,
    backend: str = "bilinear",
    algorithm=DEFAULT_ALGORITHM,
    warm_starts: np.ndarray | None = None,
    max_iterations: int | None = None,
    threads: int | None = None,
) -> LinkTable:
    """Link every emitter-receiver pair.

    A homogeneous field short-circuits to straight rays with zero
    iterations.  Otherwise pairs are solved with the secant method (2D) or
    the Broyden-like method (3D), warm-started from ``warm_starts`` (an
    array of launch angles in pair order) when given.  Per-pair failures are
    collected in the table, never raised.
    """
    h = field.spec.spacing
    ds = ds if ds is not None else h
    tau = tau if tau is not None else h
    _check_margin(field, geometry, ds)
    pairs = geometry.pairs()

    if field.kind == "sound-speed":
        index_field = field.with_values(1.0 / field.flat, "slowness")
    else:
        index_field = field

    if index_field.is_homogeneous():
        results = []
        for e, r in pairs:
            traj = straight_trajectory(geometry.emitters[e], geometry.receivers[r], ds)
            results.append(
                LinkResult(
                    angles=straight_aim(geometry.emitters[e], geometry.receivers[r]),
                    trajectory=traj,
                    residual=np.zeros(geometry.dim - 1),
                    iterations=0,
                    converged=True,
                    emitter_id=e,
                    receiver_id=r,
                )
            )
        return LinkTable(geometry, results)

    sampler = get_sampler(index_field, backend)
    maxit = max_iterations or (20 if geometry.dim == 2 else 30)

    if geometry.dim == 2:
        results = _link_ring_batched(
            geometry, sampler, pairs, ds, tau, StepAlgorithm(algorithm), warm_starts, maxit
        )
        return LinkTable(geometry, results)

    def solve(k):
        e, r = pairs[k]
        problem = LinkProblem(
            emitter=geometry.emitters[e],
            receiver=geometry.receivers[r],
            sampler=sampler,
            center=geometry.center,
            radius=geometry.radius,
            ds=ds,
            tau=tau,
            algorithm=StepAlgorithm(algorithm),
            max_iterations=maxit,
        )
        w = None if warm_starts is None else warm_starts[k]
        try:
            return link_broyden(problem, w, e=e, r=r)
        except Exception:
            return LinkResult(
                angles=straight_aim(geometry.emitters[e], geometry.receivers[r]),
                trajectory=None,
                residual=np.full(geometry.dim - 1, np.nan),
                iterations=0,
                converged=False,
                emitter_id=e,
                receiver_id=r,
            )

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, range(len(pairs))))
    else:
        results = [solve(k) for k in range(len(pairs))]
    return LinkTable(geometry, results)


# ---------------------------------------------------------------------------
# batched 2D ring engine: traces all active rays in lockstep
# ---------------------------------------------------------------------------


def _batch_trace_to_circle(sampler, starts, thetas, ds, center, radius, algorithm,
                           max_steps, record=False):
    """Trace N rays until each crosses the detection circle (from inside).

    Returns interception points (nan rows when a ray never crosses), step
    counts, and optionally the full position history (N, S, dim).
    """
    n = len(thetas)
    x = starts.astype(float).copy()
    d = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    stepper = _STEPPERS[StepAlgorithm(algorithm)]
    rhs = _make_rhs(sampler)
    active = np.ones(n, dtype=bool)
    intercept = np.full((n, 2), np.nan)
    steps = np.zeros(n, dtype=int)
    hist_x = [x.copy()] if record else None
    hist_d = [d.copy()] if record else None

    for m in range(max_steps):
        if not active.any():
            break
        xa, da = x[active], d[active]
        xn, dn = stepper(xa, da, ds, rhs)
        x[active], d[active] = xn, dn
        if record:
            hist_x.append(x.copy())
            hist_d.append(d.copy())
        steps[active] += 1
        if m >= 1:
            ra = np.linalg.norm(xn - center, axis=1)
            crossed = ra >= radius
            if crossed.any():
                ids = np.flatnonzero(active)[crossed]
                a = xa[crossed] - center
                dv = xn[crossed] - xa[crossed]
                # solve |a + t dv| = radius on the last segment
                aa = np.sum(dv * dv, axis=1)
                bb = 2 * np.sum(a * dv, axis=1)
                cc = np.sum(a * a, axis=1) - radius**2
                disc = np.maximum(bb * bb - 4 * aa * cc, 0.0)
                t = np.clip((-bb + np.sqrt(disc)) / (2 * aa), 0.0, 1.0)
                intercept[ids] = center + a + t[:, None] * dv
                active[ids] = False
    if record:
        return intercept, steps, (np.stack(hist_x, axis=1), np.stack(hist_d, axis=1))
    return intercept, steps, None


def _link_ring_batched(geometry, sampler, pairs, ds, tau, algorithm, warm, maxit):
    emitters = np.stack([geometry.emitters[e] for e, _ in pairs])
    receivers = np.stack([geometry.receivers[r] for _, r in pairs])
    center = geometry.center
    radius = geometry.radius
    n = len(pairs)
    max_steps = int(np.ceil(4 * np.pi * radius / ds)) + 8

    recv_ang = np.arctan2(receivers[:, 1] - center[1], receivers[:, 0] - center[0])

    def residuals(thetas, mask):
        """Angular miss and chord miss distance for the masked subset."""
        miss = np.full(n, np.nan)
        dist = np.full(n, np.inf)
        if mask.any():
            q, _, _ = _batch_trace_to_circle(
                sampler, emitters[mask], thetas[mask], ds, center, radius,
                algorithm, max_steps,
            )
            ok = np.isfinite(q[:, 0])
            qa = np.arctan2(q[:, 1] - center[1], q[:, 0] - center[0])
            sub_miss = wrap_angle(qa - recv_ang[mask])
            sub_dist = np.linalg.norm(q - receivers[mask], axis=1)
            sub_miss[~ok] = np.nan
            sub_dist[~ok] = np.inf
            miss[mask] = sub_miss
            dist[mask] = sub_dist
        return miss, dist

    aim = np.arctan2(receivers[:, 1] - emitters[:, 1], receivers[:, 0] - emitters[:, 0])
    t0 = aim.copy() if warm is None else np.asarray(warm, dtype=float).reshape(n)
    iterations = np.zeros(n, dtype=int)

    f0, d0 = residuals(t0, np.ones(n, dtype=bool))
    converged = d0 <= tau
    theta_final = t0.copy()
    open_mask = ~converged

    t1 = t0 + SECANT_SECOND_SEED
    f1, d1 = residuals(t1, open_mask)
    iterations[open_mask] += 1
    newly = open_mask & (d1 <= tau)
    theta_final[newly] = t1[newly]
    converged |= newly
    open_mask &= ~newly

    ta, fa = t0, f0
    tb, fb = t1, f1
    for _ in range(maxit - 1):
        if not open_mask.any():
            break
        denom = fb - fa
        bad = open_mask & (~np.isfinite(denom) | (np.abs(denom) < 1e-14))
        open_mask &= ~bad  # give up on degenerate pairs
        if not open_mask.any():
            break
        tn = np.where(
            open_mask, tb - fb * wrap_angle(tb - ta) / np.where(denom == 0, 1, denom), tb
        )
        fn, dn = residuals(tn, open_mask)
        iterations[open_mask] += 1
        newly = open_mask & (dn <= tau)
        theta_final[newly] = tn[newly]
        converged |= newly
        open_mask &= ~newly
        ta = np.where(open_mask, tb, ta)
        fa = np.where(open_mask, fb, fa)
        tb = np.where(open_mask, tn, tb)
        fb = np.where(open_mask, fn, fb)
        dead = open_mask & ~np.isfinite(fb)
        open_mask &= ~dead

    theta_final[~converged] = tb[~converged]

    # one final recorded sweep to build the linked trajectories
    q, steps, history = _batch_trace_to_circle(
        sampler, emitters, theta_final, ds, center, radius, algorithm, max_steps,
        record=True,
    )
    hist_x, hist_d = history
    final_miss = np.where(
        np.isfinite(q[:, 0]),
        wrap_angle(np.arctan2(q[:, 1] - center[1], q[:, 0] - center[0]) - recv_ang),
        np.nan,
    )
    results = []
    for k, (e, r) in enumerate(pairs):
        traj = Trajectory(
            positions=hist_x[k, : steps[k] + 1],
            directions=hist_d[k, : steps[k] + 1],
            ds=ds,
            ds_last=ds,
            termination="receiver-capture" if np.isfinite(q[k, 0]) else "max-steps",
        )
        ok = bool(converged[k])
        if ok:
            try:
                traj = snap_endpoint(traj, receivers[k])
            except Exception:
                ok = False
        results.append(
            LinkResult(
                angles=np.array([theta_final[k]]),
                trajectory=traj,
                residual=np.array([final_miss[k]]),
                iterations=int(iterations[k]),
                converged=ok,
                emitter_id=e,
                receiver_id=r,
            )
        )
    return results

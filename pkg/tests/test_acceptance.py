"""Acceptance suite: one test per release criterion, one printed verdict line
each.  Frozen numbers are regression baselines recorded from the first
complete build on this grid/stepper configuration."""

import math
import time

import numpy as np
import pytest
import scipy.sparse as sp

import raytomo as rt
from raytomo.fisheye import (
    ExperimentSpec,
    length_experiment,
    radius_experiment,
    radius_ray_starts,
)
from raytomo.interp import BSplineSampler, bspline_basis, get_sampler
from raytomo.invert import InversionConfig, SparseSystem, cg_solve, reconstruct, rmse, sart_solve
from raytomo.linking import link_secant, broyden_root, make_problem, ring_array
from raytomo.paraxial import (
    caustic_count,
    compute_greens_params,
    geometric_amplitude,
    ray_jacobian_auxiliary,
    ray_jacobian_for_ray,
)
from raytomo.phantom import fisheye_reference
from raytomo.tracer import (
    RayState,
    StepAlgorithm,
    StopCondition,
    acoustic_length,
    snap_endpoint,
    straight_trajectory,
    trace,
)

ALGS = tuple(StepAlgorithm)

# mean radius deviation RE_rd (percent) at ratio 1, frozen post-build
RADIUS_BASELINE = {
    2: {
        "dual-update": 0.00779916,
        "mixed-step": 1.39683,
        "characteristics": 0.0155978,
        "runge-kutta-2": 0.00158134,
    },
    3: {
        "dual-update": 0.00418831,
        "mixed-step": 0.529231,
        "characteristics": 0.00839129,
        "runge-kutta-2": 0.001745,
    },
}
# signed mean acoustic-length deviation RE_al (percent) at ratio 1, 2D fan
LENGTH_2D_BASELINE = {
    "dual-update": -0.000576618,
    "mixed-step": -0.00167135,
    "characteristics": -0.00283416,
    "runge-kutta-2": -0.000563494,
}
LENGTH_2D_SPREAD_BASELINE = 0.00227067


def _verdict(criterion: int, ok: bool, detail: str) -> None:
    print(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def radius_results(fisheye2d, fisheye3d):
    out = {}
    for dim, fixture in ((2, fisheye2d), (3, fisheye3d)):
        _, sampler = fixture
        spec = ExperimentSpec(dim, "radius")
        out[dim] = {
            alg.value: radius_experiment(spec, sampler=sampler, ratio=1.0, algorithm=alg)
            for alg in ALGS
        }
    return out


@pytest.fixture(scope="module")
def length2d_results(fisheye2d):
    _, sampler = fisheye2d
    spec = ExperimentSpec(2, "length")
    return {
        alg.value: length_experiment(spec, sampler=sampler, ratio=1.0, algorithm=alg)
        for alg in ALGS
    }


def test_criterion_01_fisheye_closure(fisheye2d):
    field, sampler = fisheye2d
    ds = field.spec.spacing  # ratio 1
    ref, states = radius_ray_starts(2)
    t0 = time.perf_counter()
    traj = trace(
        states[0], ds, sampler,
        algorithm=StepAlgorithm.RUNGE_KUTTA_2,
        stop=StopCondition(max_steps=2000, closed_loop=True),
    )
    elapsed = time.perf_counter() - t0
    gap = float(np.linalg.norm(traj.positions[-1] - traj.positions[0]))
    ok = traj.termination == "closed-loop" and gap < ds and elapsed < 1.0
    _verdict(1, ok, f"termination={traj.termination}, gap={gap:.2e} m "
                    f"(< {ds:.4f}), runtime {elapsed:.2f} s")


def test_criterion_02_algorithm_ordering(radius_results):
    details = []
    ok = True
    for dim in (2, 3):
        res = {alg: radius_results[dim][alg].metric for alg in RADIUS_BASELINE[dim]}
        ok &= res["mixed-step"] >= res["dual-update"]
        ok &= res["mixed-step"] >= res["runge-kutta-2"]
        for alg, frozen in RADIUS_BASELINE[dim].items():
            ok &= abs(res[alg] - frozen) <= 0.05 * frozen
        details.append(
            f"{dim}D RE_rd% dual={res['dual-update']:.4g} mixed={res['mixed-step']:.4g} "
            f"rk2={res['runge-kutta-2']:.4g}"
        )
    _verdict(2, ok, "; ".join(details))


def test_criterion_03_acoustic_length_agreement(length2d_results, radius_results):
    # Path errors are stationary (Fermat), so every stepper's RE_al is
    # second order and their spread tracks the common quadrature error.  The
    # calibrated reading of "nearly identical": the spread is at least 10x
    # below the largest radius deviation of the same sweep, plus a frozen
    # regression bound on the spread itself.
    vals = np.array([length2d_results[alg.value].metric for alg in ALGS])
    spread = float(vals.max() - vals.min())
    worst_rd = max(r.metric for r in radius_results[2].values())
    ok = spread * 10.0 <= worst_rd
    ok &= spread <= 1.5 * LENGTH_2D_SPREAD_BASELINE
    for alg, frozen in LENGTH_2D_BASELINE.items():
        ok &= abs(length2d_results[alg].metric - frozen) <= 0.10 * abs(frozen) + 1e-5
    _verdict(3, ok, f"RE_al spread {spread:.4g}% vs worst RE_rd {worst_rd:.4g}% "
                    f"(ratio {worst_rd / spread:.0f}x, need >= 10x)")


def test_criterion_04_analytic_lengths(length2d_results, fisheye3d):
    # 2D: the theta = 0 chord of the fan has L_true = pi/2
    fan = length2d_results["runge-kutta-2"]
    mid = fan.ray_count // 2
    dev2 = float(fan.per_ray[mid])
    # 3D: one full loop has L_true = pi
    field3, sampler3 = fisheye3d
    ref3, states3 = radius_ray_starts(3)
    ds = field3.spec.spacing
    traj = trace(
        states3[0], ds, sampler3,
        algorithm=StepAlgorithm.RUNGE_KUTTA_2,
        stop=StopCondition(max_steps=2500, closed_loop=True),
    )
    traj = snap_endpoint(traj, states3[0].x)
    L3 = acoustic_length(traj, field3)
    L3_true = fisheye_reference(3, 1.0, "length").L_true
    dev3 = 100.0 * (L3 - L3_true) / L3_true
    ok = abs(dev2) <= 0.5 and abs(dev3) <= 0.5
    _verdict(4, ok, f"2D chord deviation {dev2:.4g}% of pi/2, "
                    f"3D loop deviation {dev3:.4g}% of pi (tol 0.5%)")


def test_criterion_05_quadrature_order():
    spec = rt.GridSpec(origin=(0.0, 0.0), spacing=0.05, counts=(64, 64))
    xy = spec.node_coordinates()
    field = rt.ScalarField(spec, 1.0 + xy[:, 0] ** 2)
    a, b = np.array([0.4, 0.7]), np.array([2.4, 1.9])
    length = float(np.linalg.norm(b - a))
    exact = length * (1.0 + (a[0] ** 2 + a[0] * b[0] + b[0] ** 2) / 3.0)
    ratios = np.array([1.0, 0.5, 0.25, 0.125])
    errs = [
        abs(acoustic_length(straight_trajectory(a, b, r * spec.spacing), field,
                            backend="bspline") - exact)
        for r in ratios
    ]
    slope = float(np.polyfit(np.log(ratios), np.log(errs), 1)[0])
    ok = abs(slope - 2.0) <= 0.1
    _verdict(5, ok, f"log-log convergence slope {slope:.4f} (need 2.0 +- 0.1)")


def test_criterion_06_interpolation_suite():
    # cubic exactness
    spec = rt.GridSpec(origin=(0.0, 0.0), spacing=0.1, counts=(48, 48))
    xy = spec.node_coordinates()
    field = rt.ScalarField(spec, 10.0 + 0.3 * xy[:, 0] ** 3 - 0.2 * xy[:, 0] * xy[:, 1] ** 2 + xy[:, 1])
    sampler = BSplineSampler(field)
    rng = np.random.default_rng(0)
    pts = rng.uniform(1.8, 2.9, size=(200, 2))
    vals, grads = sampler.value_and_gradient(pts)
    exact = 10.0 + 0.3 * pts[:, 0] ** 3 - 0.2 * pts[:, 0] * pts[:, 1] ** 2 + pts[:, 1]
    err_val = float(np.max(np.abs(vals - exact) / np.abs(exact)))
    # gradient vs finite differences
    eps = 1e-6
    err_grad = 0.0
    for k in range(2):
        dp, dm = pts.copy(), pts.copy()
        dp[:, k] += eps
        dm[:, k] -= eps
        fd = (sampler.value_and_gradient(dp)[0] - sampler.value_and_gradient(dm)[0]) / (2 * eps)
        err_grad = max(err_grad, float(np.max(np.abs(grads[:, k] - fd) / np.abs(fd))))
    # partition of unity
    t = np.linspace(0.0, 1.0, 257)
    err_pou = float(np.max(np.abs(bspline_basis(t, 0).sum(axis=-1) - 1.0)))
    ok = err_val <= 1e-9 and err_grad <= 1e-6 and err_pou <= 1e-12
    _verdict(6, ok, f"cubic exactness {err_val:.2e} (<=1e-9), gradient-vs-FD "
                    f"{err_grad:.2e} (<=1e-6), partition of unity {err_pou:.2e} (<=1e-12)")


def test_criterion_07_linking_solvers():
    spec = rt.GridSpec((-0.1, -0.1), 0.2 / 63, (64, 64))
    field = rt.ScalarField(spec, np.full(spec.num_nodes, 1.0 / 1500.0), "slowness")
    geo = ring_array(8, 0.085)
    worst = 0
    all_converged = True
    for e, r in geo.pairs():
        res = link_secant(make_problem(field, geo, e, r))
        worst = max(worst, res.iterations)
        all_converged &= res.converged
    # Broyden on synthetic affine 2-vector residuals
    rng = np.random.default_rng(1)
    bad = 0
    for _ in range(20):
        M = np.eye(2) * 2.0 + rng.normal(0.0, 0.3, (2, 2))
        bvec = rng.normal(size=2)
        u, it = broyden_root(lambda v: M @ v - bvec, np.zeros(2),
                             B0=2.0 * np.eye(2), tol=1e-12)
        if it > 10 or np.linalg.norm(M @ u - bvec) > 1e-10:
            bad += 1
    ok = all_converged and worst <= 2 and bad == 0
    _verdict(7, ok, f"homogeneous secant worst-case {worst} iterations "
                    f"(<=2), Broyden affine failures {bad}/20")


def test_criterion_08_inner_solvers():
    rng = np.random.default_rng(2)
    # CG vs dense least squares on a random sparse system
    A = rng.uniform(0.0, 1.0, (20, 30))
    A[rng.uniform(size=A.shape) > 0.4] = 0.0
    b = rng.normal(size=20)
    system = SparseSystem(sp.csr_matrix(A), b, np.zeros((20, 2), dtype=int))
    x = cg_solve(system, iterations=30)
    x_ref = np.linalg.lstsq(A, b, rcond=None)[0]
    err_cg = float(np.max(np.abs(A @ x - A @ x_ref)))
    # SART on a consistent full-rank (diagonally dominant) toy system
    n = 8
    T = 2.0 * np.eye(n) + rng.uniform(0.0, 0.15, (n, n))
    x_true = rng.uniform(-1.0, 1.0, n)
    toy = SparseSystem(sp.csr_matrix(T), T @ x_true, np.zeros((n, 2), dtype=int))
    x_sart = sart_solve(toy, sweeps=200)
    err_sart = float(np.linalg.norm(T @ x_sart - toy.residual))
    ok = err_cg <= 1e-8 and err_sart < 1e-8
    _verdict(8, ok, f"CG-vs-lstsq {err_cg:.2e} (<=1e-8), SART residual "
                    f"{err_sart:.2e} (<1e-8)")


def test_criterion_09_end_to_end_inversion(blob_setup, blob_tofs):
    spec, truth, geometry = blob_setup
    config = InversionConfig(solver="sart", outer_iterations=5, stop_threshold=0.0)
    t0 = time.perf_counter()
    result = reconstruct(blob_tofs, geometry, spec, config, truth=truth)
    elapsed = time.perf_counter() - t0
    init = rmse(np.full(spec.num_nodes, config.c0), truth.flat)
    errs = np.array([init] + [rec.rmse_vs_truth for rec in result.log])
    strictly_decreasing = bool(np.all(np.diff(errs) < 0))
    final_ratio = errs[-1] / init
    ok = strictly_decreasing and final_ratio <= 0.5 and elapsed < 120.0
    _verdict(9, ok, f"RMSE {' -> '.join(f'{e:.3f}' for e in errs)} m/s, "
                    f"final/initial {final_ratio:.3f} (<=0.5), "
                    f"runtime {elapsed:.1f} s (<120)")


def test_criterion_10_greens_parameters(fisheye2d):
    # homogeneous point-source amplitude decay
    spec2 = rt.GridSpec(origin=(-2.0, -2.0), spacing=0.1, counts=(41, 41))
    homo2 = rt.ScalarField(spec2, np.ones(spec2.num_nodes))
    traj2 = straight_trajectory([-1.5, 0.0], [1.5, 0.0], 0.05)
    jac2 = ray_jacobian_for_ray(traj2, homo2)
    amp2 = geometric_amplitude(jac2, np.ones(traj2.num_points), 10)
    k1, k2 = 20, 40
    ratio2 = amp2[k1] / amp2[k2]
    want2 = math.sqrt(traj2.arc[k2] / traj2.arc[k1])
    err2 = abs(ratio2 / want2 - 1.0)

    spec3 = rt.GridSpec(origin=(-2.0, -2.0, -2.0), spacing=0.2, counts=(21, 21, 21))
    homo3 = rt.ScalarField(spec3, np.ones(spec3.num_nodes))
    traj3 = straight_trajectory([-1.5, 0.0, 0.1], [1.5, 0.0, 0.1], 0.1)
    jac3 = ray_jacobian_for_ray(traj3, homo3)
    amp3 = geometric_amplitude(jac3, np.ones(traj3.num_points), 5)
    k1, k2 = 10, 20
    ratio3 = amp3[k1] / amp3[k2]
    want3 = traj3.arc[k2] / traj3.arc[k1]
    err3 = abs(ratio3 / want3 - 1.0)

    # transport invariant along a bent fish-eye ray, with the Jacobian from
    # independently traced auxiliary rays (not the paraxial one that built A)
    field, sampler = fisheye2d
    ref, jac_aux = ray_jacobian_auxiliary(
        sampler, [0.0, 1.0], [0.0], field.spec.spacing,
        stop=StopCondition(max_steps=300),
    )
    params = compute_greens_params(ref, field, omega=2 * np.pi * 1e6)
    nvals, _ = sampler.value_and_gradient(ref.positions)
    m = len(jac_aux)
    mask = (ref.arc[:m] > 0.3) & (np.abs(jac_aux) > 0.05)
    inv = params.amp_geometric[:m][mask] ** 2 * nvals[:m][mask] * np.abs(jac_aux[mask])
    err_inv = float(np.max(np.abs(inv / np.median(inv) - 1.0)))

    # homogeneous phase phi = omega s / c
    c0 = 1500.0
    spec_s = rt.GridSpec((-0.1, -0.1), 0.2 / 63, (64, 64))
    slow = rt.ScalarField(spec_s, np.full(spec_s.num_nodes, 1.0 / c0), "slowness")
    traj_s = straight_trajectory([-0.08, 0.0], [0.08, 0.0], spec_s.spacing)
    p = compute_greens_params(traj_s, slow, omega=2 * np.pi * 1e6)
    want = 2 * np.pi * 1e6 * traj_s.arc / c0
    err_phi = float(np.max(np.abs(p.phase[1:] / want[1:] - 1.0)))

    ok = err2 <= 5e-3 and err3 <= 5e-3 and err_inv <= 1e-2 and err_phi <= 1e-10
    _verdict(10, ok, f"A_geom ratio error 2D {err2:.2e} / 3D {err3:.2e} (<=5e-3), "
                     f"transport invariant {err_inv:.2e} (<=1e-2), "
                     f"phase {err_phi:.2e} (<=1e-10)")


def test_criterion_11_paraxial_refocusing(fisheye2d):
    field, sampler = fisheye2d
    ds = field.spec.spacing
    ref, states = radius_ray_starts(2)
    traj = trace(
        states[0], ds, sampler,
        algorithm=StepAlgorithm.RUNGE_KUTTA_2,
        stop=StopCondition(max_steps=2000, closed_loop=True),
    )
    # transverse paraxial displacement of a point source; in 2D this is the
    # signed ray Jacobian
    jac = ray_jacobian_for_ray(traj, sampler)
    refocus = abs(jac[-1]) / np.max(np.abs(jac))
    flips = int(caustic_count(jac)[-1])
    ok = refocus <= 0.05 and flips == 1
    _verdict(11, ok, f"return |dx_perp| = {100 * refocus:.3f}% of loop maximum "
                     f"(<=5%), {flips} conjugate point(s)")

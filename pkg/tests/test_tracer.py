import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import raytomo as rt
from raytomo.grid import GridSpec, ScalarField
from raytomo.interp import BSplineSampler
from raytomo.tracer import (
    RayState,
    StepAlgorithm,
    StopCondition,
    TraceError,
    Trajectory,
    acoustic_length,
    quadrature_weights,
    ray_rhs,
    snap_endpoint,
    straight_trajectory,
    system_row,
    trace,
    travel_time,
    travel_time_samples,
)


def _homogeneous(value=1.0, kind="refractive-index"):
    spec = GridSpec(origin=(-2.0, -2.0), spacing=0.25, counts=(17, 17))
    return ScalarField(spec, np.full(spec.num_nodes, value), kind)


def test_ray_rhs_zero_in_homogeneous_media():
    f = ray_rhs(1.0, np.zeros(2), np.array([1.0, 0.0]))
    assert np.allclose(f, 0.0)


def test_ray_rhs_projects_out_parallel_gradient():
    d = np.array([1.0, 0.0])
    g = np.array([3.0, 0.0])  # entirely along the ray: no bending
    assert np.allclose(ray_rhs(2.0, g, d), 0.0)
    g = np.array([0.0, 4.0])
    assert np.allclose(ray_rhs(2.0, g, d), [0.0, 2.0])


def test_ray_rhs_scale_invariance():
    # slowness fields bend rays exactly like the equivalent index field
    rng = np.random.default_rng(0)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    g = rng.normal(size=3)
    f1 = ray_rhs(1.7, g, d)
    f2 = ray_rhs(1.7 * 500.0, g * 500.0, d)
    assert np.allclose(f1, f2)


def test_ray_rhs_rejects_nonpositive_index():
    with pytest.raises(ValueError):
        ray_rhs(0.0, np.zeros(2), np.array([1.0, 0.0]))


@pytest.mark.parametrize("algorithm", list(StepAlgorithm))
def test_all_algorithms_go_straight_in_homogeneous_media(algorithm):
    field = _homogeneous()
    traj = trace(
        RayState([-1.5, 0.3], [1.0, 0.0]), 0.1, field,
        algorithm=algorithm, stop=StopCondition(max_steps=25),
    )
    assert traj.num_points == 26
    assert np.allclose(traj.positions[:, 1], 0.3, atol=1e-14)
    assert np.allclose(traj.directions, [1.0, 0.0], atol=1e-14)


def test_directions_stay_unit_norm(fisheye2d):
    _, sampler = fisheye2d
    traj = trace(
        RayState([0.0, 1.0], [1.0, 1.0]), 0.02, sampler,
        stop=StopCondition(max_steps=400),
    )
    norms = np.linalg.norm(traj.directions, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-12)


def test_boundary_exit_termination():
    field = _homogeneous()
    traj = trace(RayState([0.0, 0.0], [1.0, 0.0]), 0.1, field)
    assert traj.termination == "boundary-exit"
    assert traj.positions[-1, 0] <= 2.0 + 1e-9


def test_trajectory_gaps_and_arc():
    pos = np.zeros((4, 2))
    pos[:, 0] = [0.0, 1.0, 2.0, 2.5]
    dirs = np.tile([1.0, 0.0], (4, 1))
    traj = Trajectory(pos, dirs, ds=1.0, ds_last=0.5, termination="receiver-capture")
    assert np.allclose(traj.gaps, [1.0, 1.0, 0.5])
    assert np.allclose(traj.arc, [0.0, 1.0, 2.0, 2.5])
    assert traj.length == 2.5


def test_quadrature_weights_generalized_trapezoid():
    pos = np.zeros((4, 2))
    pos[:, 0] = [0.0, 1.0, 2.0, 2.5]
    dirs = np.tile([1.0, 0.0], (4, 1))
    traj = Trajectory(pos, dirs, ds=1.0, ds_last=0.5, termination="receiver-capture")
    w = quadrature_weights(traj)
    # ds/2, ds, (ds + ds')/2, ds'/2
    assert np.allclose(w, [0.5, 1.0, 0.75, 0.25])
    assert np.isclose(w.sum(), traj.length)


@given(n=st.integers(2, 30), ds_last_frac=st.floats(0.05, 1.0))
@settings(max_examples=40, deadline=None)
def test_quadrature_weights_sum_to_arc_length(n, ds_last_frac):
    ds = 0.3
    pos = np.zeros((n + 1, 2))
    pos[:, 0] = np.arange(n + 1) * ds
    pos[-1, 0] = n * ds - ds * (1.0 - ds_last_frac)
    dirs = np.tile([1.0, 0.0], (n + 1, 1))
    traj = Trajectory(pos, dirs, ds=ds, ds_last=ds * ds_last_frac, termination="max-steps")
    w = quadrature_weights(traj)
    assert np.isclose(w.sum(), traj.arc[-1])


def test_acoustic_length_constant_field_equals_scaled_length():
    field = _homogeneous(value=1.5)
    traj = straight_trajectory([-1.0, 0.0], [1.0, 0.0], 0.3)
    assert np.isclose(acoustic_length(traj, field), 3.0, atol=1e-12)


def test_acoustic_length_rejects_sound_speed():
    field = _homogeneous(value=1500.0, kind="sound-speed")
    traj = straight_trajectory([-1.0, 0.0], [1.0, 0.0], 0.3)
    with pytest.raises(ValueError):
        acoustic_length(traj, field)


def test_travel_time_sound_speed_vs_slowness():
    cs = _homogeneous(value=1500.0, kind="sound-speed")
    sl = _homogeneous(value=1.0 / 1500.0, kind="slowness")
    traj = straight_trajectory([-1.0, 0.5], [1.0, 0.5], 0.25)
    t1 = travel_time(traj, cs)
    t2 = travel_time(traj, sl)
    assert np.isclose(t1, 2.0 / 1500.0, rtol=1e-12)
    assert np.isclose(t1, t2, rtol=1e-12)
    samples = travel_time_samples(traj, cs)
    assert samples[0] == 0.0
    assert np.isclose(samples[-1], t1, rtol=1e-12)
    assert np.all(np.diff(samples) > 0)


def test_straight_trajectory_partial_final_step():
    traj = straight_trajectory([0.0, 0.0], [1.0, 0.0], 0.3)
    assert np.allclose(traj.positions[-1], [1.0, 0.0])
    assert np.isclose(traj.gaps[:-1].sum() + traj.ds_last, 1.0)
    assert traj.ds_last <= 0.3 + 1e-12
    # exact multiple: no degenerate final gap
    traj = straight_trajectory([0.0, 0.0], [1.0, 0.0], 0.25)
    assert np.isclose(traj.ds_last, 0.25)
    assert traj.num_points == 5


def test_snap_endpoint_truncates_overshoot():
    # straight trajectory passing the target: snapped path must not double back
    pos = np.zeros((6, 2))
    pos[:, 0] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    dirs = np.tile([1.0, 0.0], (6, 1))
    traj = Trajectory(pos, dirs, ds=1.0, ds_last=1.0, termination="max-steps")
    snapped = snap_endpoint(traj, [3.4, 0.0])
    assert np.allclose(snapped.positions[-1], [3.4, 0.0])
    assert np.allclose(snapped.positions[-2], [3.0, 0.0])
    assert np.isclose(snapped.ds_last, 0.4)
    assert np.isclose(snapped.arc[-1], 3.4)


def test_snap_endpoint_loop_ray_targets_tail_not_launch():
    # loop trajectory whose target equals its start: the snap must attach to
    # the returning tail, not to the launch sample
    th = np.linspace(0.0, 2 * np.pi, 101)
    pos = np.stack([np.cos(th), np.sin(th)], axis=1)
    ds = 2 * np.pi / 100
    dirs = np.stack([-np.sin(th), np.cos(th)], axis=1)
    traj = Trajectory(pos, dirs, ds=ds, ds_last=ds, termination="closed-loop")
    snapped = snap_endpoint(traj, [1.0, 0.0])
    assert snapped.num_points >= 100
    assert np.isclose(snapped.arc[-1], 2 * np.pi, rtol=1e-3)


def test_snap_endpoint_rejects_distant_target():
    traj = straight_trajectory([0.0, 0.0], [1.0, 0.0], 0.1)
    with pytest.raises(TraceError):
        snap_endpoint(traj, [1.0, 5.0])


def test_system_row_sum_equals_euclidean_length():
    # row-sum identity: coefficients of a system row accumulate the
    # quadrature of n = 1, i.e. the ray's Euclidean length
    spec = GridSpec(origin=(-2.0, -2.0), spacing=0.25, counts=(17, 17))
    traj = straight_trajectory([-1.3, -0.7], [1.1, 0.9], 0.2)
    for backend in ("bilinear", "bspline"):
        row = system_row(traj, spec, backend)
        assert abs(row.row_sum - traj.length) <= 1e-10


def test_system_row_dot_equals_travel_time_bilinear():
    # modeled ToF = row . nodal slowness must equal the trapezoid of the
    # bilinearly interpolated slowness (exact linearity of the parameterization)
    spec = GridSpec(origin=(-2.0, -2.0), spacing=0.25, counts=(17, 17))
    rng = np.random.default_rng(4)
    u = rng.uniform(1 / 1600, 1 / 1400, spec.num_nodes)
    field = ScalarField(spec, u, "slowness")
    traj = straight_trajectory([-1.7, -0.2], [1.4, 1.1], 0.17)
    row = system_row(traj, spec, "bilinear")
    assert np.isclose(row.dot(u), travel_time(traj, field), rtol=0, atol=1e-15)


def test_trapezoid_convergence_order():
    spec = GridSpec(origin=(0.0, 0.0), spacing=0.05, counts=(64, 64))
    xy = spec.node_coordinates()
    field = ScalarField(spec, 1.0 + xy[:, 0] ** 2)
    a = np.array([0.4, 0.7])
    b = np.array([2.4, 1.9])
    dvec = b - a
    length = np.linalg.norm(dvec)
    # exact integral of 1 + x^2 along the segment
    x0, x1 = a[0], b[0]
    exact = length * (1.0 + (x0**2 + x0 * x1 + x1**2) / 3.0)
    ratios = np.array([1.0, 0.5, 0.25, 0.125])
    errs = []
    for rho in ratios:
        traj = straight_trajectory(a, b, rho * spec.spacing)
        errs.append(abs(acoustic_length(traj, field, backend="bspline") - exact))
    slope = np.polyfit(np.log(ratios), np.log(errs), 1)[0]
    assert abs(slope - 2.0) <= 0.1


def test_dump_trajectory_csv_thinning(tmp_path):
    traj = straight_trajectory([0.0, 0.0], [1.0, 0.0], 0.1)
    path = tmp_path / "traj.csv"
    rt.dump_trajectory_csv(path, traj, every=4)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "m,s,x1,x2"
    # every 4th sample plus the forced final sample
    assert len(lines) - 1 == math.ceil(traj.num_points / 4) + 1
    assert lines[-1].startswith(f"{traj.num_points - 1},")

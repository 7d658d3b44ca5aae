import numpy as np
import pytest
import scipy.sparse as sp

import raytomo as rt
from raytomo.invert import (
    InversionConfig,
    SparseSystem,
    ToFTable,
    assemble_system,
    cg_solve,
    reconstruct,
    rmse,
    sart_solve,
    synth_tofs,
)
from raytomo.linking import link_all


def test_tof_table_validation_and_csv(tmp_path):
    t = ToFTable([0, 0, 1], [1, 2, 0], [1e-4, 1.1e-4, 0.9e-4])
    assert len(t) == 3
    assert t.valid.all()
    assert t.lookup()[(0, 2)] == 1
    path = tmp_path / "tofs.csv"
    t.to_csv(path)
    u = ToFTable.from_csv(path)
    assert np.array_equal(u.emitter_id, t.emitter_id)
    assert np.allclose(u.tof, t.tof, rtol=0, atol=0)
    with pytest.raises(ValueError):
        ToFTable([0, 0], [1, 1], [1e-4, 2e-4])  # duplicate pair
    with pytest.raises(ValueError):
        ToFTable([0], [1], [-1e-4])  # nonpositive ToF
    with pytest.raises(ValueError):
        ToFTable([0, 1], [1], [1e-4])  # ragged columns


def _toy_system(A, b):
    return SparseSystem(
        matrix=sp.csr_matrix(A),
        residual=np.asarray(b, float),
        pair_ids=np.zeros((A.shape[0], 2), dtype=int),
    )


def test_sart_converges_on_diagonally_dominant_system():
    rng = np.random.default_rng(0)
    n = 8
    A = 2.0 * np.eye(n) + rng.uniform(0.0, 0.15, (n, n))
    x_true = rng.uniform(-1.0, 1.0, n)
    system = _toy_system(A, A @ x_true)
    x = sart_solve(system, sweeps=200)
    assert np.linalg.norm(A @ x - system.residual) < 1e-8


def test_cg_matches_least_squares_solution():
    rng = np.random.default_rng(1)
    A = rng.uniform(0.0, 1.0, (20, 30))
    A[rng.uniform(size=A.shape) > 0.4] = 0.0
    b = rng.normal(size=20)
    system = _toy_system(A, b)
    x = cg_solve(system, iterations=60)
    x_ref = np.linalg.lstsq(A, b, rcond=None)[0]
    assert np.allclose(A @ x, A @ x_ref, atol=1e-10)


def test_inversion_config_validation():
    cfg = InversionConfig()
    assert cfg.inner_iterations == 5
    assert InversionConfig(solver="cg").inner_iterations == 10
    with pytest.raises(ValueError):
        InversionConfig(solver="tikhonov")
    with pytest.raises(ValueError):
        InversionConfig(relaxation=2.5)
    with pytest.raises(ValueError):
        InversionConfig(outer_iterations=0)


def test_synth_tofs_deterministic_and_noise(blob_setup):
    spec, truth, geometry = blob_setup
    clean = synth_tofs(truth, geometry)
    assert clean.valid.all()
    # straight-chord scale sanity: 2R / c0 upper bound, short chords shorter
    chords = np.linalg.norm(
        geometry.emitters[clean.emitter_id] - geometry.receivers[clean.receiver_id],
        axis=1,
    )
    assert np.all(clean.tof >= chords / truth.values.max() * 0.999)
    assert np.all(clean.tof <= chords / truth.values.min() * 1.001)
    n1 = synth_tofs(truth, geometry, noise_sigma=1e-8, rng=7)
    n2 = synth_tofs(truth, geometry, noise_sigma=1e-8, rng=7)
    assert np.array_equal(n1.tof, n2.tof)
    n3 = synth_tofs(truth, geometry, noise_sigma=1e-8, rng=8)
    assert not np.array_equal(n1.tof, n3.tof)
    assert rmse(n1.tof, clean.tof) < 5e-8


def test_synth_tofs_rejects_index_field(blob_setup):
    spec, truth, geometry = blob_setup
    wrong = truth.with_values(np.ones(spec.num_nodes), "refractive-index")
    with pytest.raises(ValueError):
        synth_tofs(wrong, geometry)


def test_assemble_system_consistency(blob_setup, blob_tofs):
    spec, truth, geometry = blob_setup
    c0 = 1500.0
    slowness = np.full(spec.num_nodes, 1.0 / c0)
    homo = truth.with_values(np.full(spec.num_nodes, c0), "sound-speed")
    links = link_all(geometry, homo)
    system = assemble_system(links, blob_tofs, spec, slowness)
    n_pairs = len(geometry.pairs())
    assert system.shape == (n_pairs, spec.num_nodes)
    # row dot current slowness reproduces the modeled straight-ray ToF, so
    # the residual of a homogeneous phantom measured on itself vanishes
    homo_tofs = synth_tofs(homo, geometry)
    sys0 = assemble_system(links, homo_tofs, spec, slowness)
    assert np.max(np.abs(sys0.residual)) < 1e-15
    # blob makes rays through the center arrive early: positive c contrast,
    # negative slowness update, residual = measured - modeled < 0 somewhere
    assert system.residual.min() < -1e-8
    assert len(system.skipped) == 0


def test_assemble_system_skips_invalid_pairs(blob_setup, blob_tofs):
    spec, truth, geometry = blob_setup
    c0 = 1500.0
    homo = truth.with_values(np.full(spec.num_nodes, c0), "sound-speed")
    links = link_all(geometry, homo)
    bad = ToFTable(
        blob_tofs.emitter_id,
        blob_tofs.receiver_id,
        blob_tofs.tof,
        np.concatenate([[False] * 5, [True] * (len(blob_tofs) - 5)]),
    )
    system = assemble_system(links, bad, spec, np.full(spec.num_nodes, 1.0 / c0))
    assert system.shape[0] == len(geometry.pairs()) - 5
    assert len(system.skipped) == 5


def test_reconstruct_recovers_blob(blob_setup, blob_tofs):
    spec, truth, geometry = blob_setup
    config = InversionConfig(solver="sart", outer_iterations=3)
    result = reconstruct(blob_tofs, geometry, spec, config, truth=truth)
    assert len(result.fields) == len(result.log)
    errs = [rec.rmse_vs_truth for rec in result.log]
    init = rmse(np.full(spec.num_nodes, config.c0), truth.flat)
    assert errs[0] < init
    assert errs[-1] <= errs[0]
    assert errs[-1] < 0.5 * init
    # the recovered anomaly peaks near the true blob center
    recon = result.fields[-1]
    peak = np.unravel_index(np.argmax(recon.values), spec.counts)
    peak_xy = np.asarray(spec.origin) + np.asarray(peak) * spec.spacing
    assert np.linalg.norm(peak_xy - [0.01, -0.005]) < 0.02


def test_reconstruct_cg_variant(blob_setup, blob_tofs):
    spec, truth, geometry = blob_setup
    config = InversionConfig(solver="cg", outer_iterations=2)
    result = reconstruct(blob_tofs, geometry, spec, config, truth=truth)
    init = rmse(np.full(spec.num_nodes, config.c0), truth.flat)
    assert result.log[-1].rmse_vs_truth < 0.7 * init


def test_reconstruction_log_csv(blob_setup, blob_tofs, tmp_path):
    spec, truth, geometry = blob_setup
    config = InversionConfig(solver="sart", outer_iterations=2)
    result = reconstruct(blob_tofs, geometry, spec, config, truth=truth)
    path = tmp_path / "log.csv"
    result.log_to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("outer_iteration,residual_norm")
    assert len(lines) - 1 == len(result.log)

"""Iteratively linearized time-of-flight sound-speed inversion.

The unknown is parameterized as slowness 1/c, so each modeled ToF is
exactly linear in the nodal unknowns along a fixed ray (the system row dot
the nodal slowness).  Every outer linearization relinks the rays on the
current field (warm-started from the previous angles), assembles the sparse
system, runs the inner solver (SART by default, CG optionally), and applies
the slowness update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import GridSpec, ScalarField
from .linking import ArrayGeometry, LinkTable, link_all
from .tracer import system_row


class InversionError(RuntimeError):
    pass


@dataclass
class ToFTable:
    """Measured (or synthetic) time-of-flight entries, one per pair."""

    emitter_id: np.ndarray
    receiver_id: np.ndarray
    tof: np.ndarray  # seconds
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.emitter_id = np.asarray(self.emitter_id, dtype=int)
        self.receiver_id = np.asarray(self.receiver_id, dtype=int)
        self.tof = np.asarray(self.tof, dtype=float)
        if self.valid is None:
            self.valid = np.ones(len(self.tof), dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (len(self.emitter_id) == len(self.receiver_id) == len(self.tof) == len(self.valid)):
            raise ValueError("ToF table columns disagree in length")
        keys = set(zip(self.emitter_id.tolist(), self.receiver_id.tolist()))
        if len(keys) != len(self.tof):
            raise ValueError("duplicate emitter-receiver pair in ToF table")
        if np.any(self.tof[self.valid] <= 0):
            raise ValueError("valid ToF entries must be positive")

    def __len__(self):
        return len(self.tof)

    def lookup(self) -> dict[tuple[int, int], int]:
        return {
            (int(e), int(r)): k
            for k, (e, r) in enumerate(zip(self.emitter_id, self.receiver_id))
        }

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("emitter_id,receiver_id,tof_s,valid\n")
            for e, r, t, v in zip(self.emitter_id, self.receiver_id, self.tof, self.valid):
                fh.write(f"{e},{r},{t:.17g},{int(v)}\n")

    @classmethod
    def from_csv(cls, path) -> "ToFTable":
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        valid = raw[:, 3].astype(bool) if raw.shape[1] > 3 else None
        return cls(raw[:, 0].astype(int), raw[:, 1].astype(int), raw[:, 2], valid)


@dataclass(frozen=True)
class SparseSystem:
    """Sparse path-length Jacobian (pairs x grid nodes) plus ToF residual."""

    matrix: sp.csr_matrix  # coefficients in meters
    residual: np.ndarray  # measured - modeled ToF, seconds
    pair_ids: np.ndarray  # (rows, 2) emitter/receiver ids
    skipped: tuple = ()

    @property
    def shape(self):
        return self.matrix.shape


@dataclass
class InversionConfig:
    solver: str = "sart"  # "sart" | "cg"
    inner_iterations: int | None = None  # defaults: 5 SART sweeps, 10 CG iterations
    outer_iterations: int = 5
    c0: float = 1500.0
    relaxation: float = 1.0  # SART lambda
    stop_threshold: float = 1e-4  # relative update-norm stop
    ds: float | None = None  # defaults to the grid spacing
    backend: str = "bilinear"
    tau: float | None = None  # defaults to grid spacing / 20 (sub-voxel)
    max_link_iterations: int = 20
    threads: int | None = None

    def __post_init__(self):
        if self.solver not in ("sart", "cg"):
            raise ValueError("solver must be 'sart' or 'cg'")
        if self.inner_iterations is None:
            self.inner_iterations = 5 if self.solver == "sart" else 10
        if self.inner_iterations < 1 or self.outer_iterations < 1:
            raise ValueError("iteration counts must be >= 1")
        if not 0 < self.relaxation < 2:
            raise ValueError("SART relaxation must lie in (0, 2)")


def synth_tofs(
    true_field: ScalarField,
    geometry: ArrayGeometry,
    ds: float | None = None,
    backend: str = "bilinear",
    noise_sigma: float = 0.0,
    rng: np.random.Generator | int | None = None,
    tau: float | None = None,
) -> ToFTable:
    """Synthesize ToF data by linking all pairs on the true field.

    Unconverged pairs are masked invalid.  Gaussian noise with standard
    deviation ``noise_sigma`` (seconds) is added when requested.  Linking
    uses a sub-voxel interception tolerance (grid spacing / 20) by default:
    the snap onto the receiver bends the last segment, and with a
    voxel-sized miss that kink perturbs the ToF by an amount comparable to
    a few-percent sound-speed contrast.
    """
    if true_field.kind != "sound-speed":
        raise ValueError("synthetic ToFs need a sound-speed phantom field")
    if tau is None:
        tau = true_field.spec.spacing / 20.0
    slowness = true_field.with_values(1.0 / true_field.flat, "slowness")
    table = link_all(geometry, slowness, ds=ds, tau=tau, backend=backend)
    from .tracer import travel_time

    emitters, receivers, tofs, valid = [], [], [], []
    for res in table:
        emitters.append(res.emitter_id)
        receivers.append(res.receiver_id)
        if res.converged and res.trajectory is not None:
            tofs.append(travel_time(res.trajectory, slowness, backend))
            valid.append(True)
        else:
            tofs.append(np.nan)
            valid.append(False)
    tofs = np.asarray(tofs)
    valid = np.asarray(valid)
    if noise_sigma > 0:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        tofs = tofs + gen.normal(0.0, noise_sigma, size=len(tofs))
    tofs[~valid] = 1.0  # placeholder; masked out
    return ToFTable(np.asarray(emitters), np.asarray(receivers), tofs, valid)


def assemble_system(
    links: LinkTable,
    measured: ToFTable,
    grid: GridSpec,
    slowness: np.ndarray,
    backend: str = "bilinear",
) -> SparseSystem:
    """Build one row per valid converged pair on the slowness parameterization.

    The modeled ToF is the row dotted with the current nodal slowness, so
    the residual (measured - modeled) is consistent with the Jacobian by
    construction.  Missing or unconverged pairs drop their rows (recorded in
    ``skipped``) rather than zero-filling, which would bias SART column sums.
    """
    lut = measured.lookup()
    slowness = np.asarray(slowness, dtype=float).reshape(-1)
    rows_i, cols, vals, b, pair_ids, skipped = [], [], [], [], [], []
    r = 0
    for res in links:
        key = (res.emitter_id, res.receiver_id)
        k = lut.get(key)
        if k is None or not measured.valid[k] or not res.converged or res.trajectory is None:
            skipped.append(key)
            continue
        row = system_row(res.trajectory, grid, backend)
        rows_i.append(np.full(len(row.indices), r))
        cols.append(row.indices)
        vals.append(row.coefficients)
        modeled = float(np.dot(row.coefficients, slowness[row.indices]))
        b.append(measured.tof[k] - modeled)
        pair_ids.append(key)
        r += 1
    if r == 0:
        raise InversionError("no valid converged pairs: empty system")
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols))),
        shape=(r, grid.num_nodes),
    )
    return SparseSystem(
        matrix=matrix,
        residual=np.asarray(b),
        pair_ids=np.asarray(pair_ids),
        skipped=tuple(skipped),
    )


def sart_step(system: SparseSystem, update: np.ndarray, relaxation: float = 1.0) -> np.ndarray:
    """One SART sweep, weighted in both data space (row sums) and solution
    space (column sums); zero-sum rows/columns are skipped."""
    A = system.matrix
    if A.shape[0] == 0:
        raise InversionError("empty system")
    u = np.asarray(update, dtype=float).reshape(-1)
    row_sums = np.asarray(A.sum(axis=1)).ravel()
    col_sums = np.asarray(A.sum(axis=0)).ravel()
    r = system.residual - A @ u
    rw = np.divide(r, row_sums, out=np.zeros_like(r), where=row_sums != 0)
    num = A.T @ rw
    du = np.divide(num, col_sums, out=np.zeros_like(num), where=col_sums != 0)
    return u + relaxation * du


def sart_solve(system: SparseSystem, sweeps: int, relaxation: float = 1.0) -> np.ndarray:
    u = np.zeros(system.matrix.shape[1])
    for _ in range(sweeps):
        u = sart_step(system, u, relaxation)
    return u


def cg_solve(system: SparseSystem, iterations: int) -> np.ndarray:
    """Conjugate-gradient least squares (CGLS) on the normal equations,
    starting from zero.  Returns the current iterate on breakdown."""
    A = system.matrix
    b = system.residual
    x = np.zeros(A.shape[1])
    r = b.copy()
    s = A.T @ r
    p = s.copy()
    gamma = float(np.dot(s, s))
    if gamma == 0:
        return x
    for _ in range(iterations):
        q = A @ p
        qq = float(np.dot(q, q))
        if qq == 0:
            break  # breakdown: zero direction norm
        alpha = gamma / qq
        x = x + alpha * p
        r = r - alpha * q
        s = A.T @ r
        gamma_new = float(np.dot(s, s))
        if gamma_new == 0:
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x


@dataclass
class OuterIterationRecord:
    iteration: int
    residual_norm: float
    update_norm: float
    rmse_vs_truth: float
    halved: bool
    link_convergence: float
    median_link_iterations: float


@dataclass
class ReconstructionResult:
    fields: list[ScalarField]  # sound speed after each outer iteration
    log: list[OuterIterationRecord]
    converged: bool

    def log_to_csv(self, path) -> None:
        cols = ["outer_iteration", "residual_norm", "update_norm", "rmse_vs_truth",
                "halved", "link_convergence", "median_link_iterations"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for rec in self.log:
                fh.write(
                    f"{rec.iteration},{rec.residual_norm:.17g},{rec.update_norm:.17g},"
                    f"{rec.rmse_vs_truth:.17g},{int(rec.halved)},"
                    f"{rec.link_convergence:.17g},{rec.median_link_iterations:.17g}\n"
                )


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2)))


def reconstruct(
    measured: ToFTable,
    geometry: ArrayGeometry,
    grid: GridSpec,
    config: InversionConfig,
    truth: ScalarField | None = None,
) -> ReconstructionResult:
    """Run the iteratively linearized ToF inversion from a homogeneous start.

    Returns every intermediate sound-speed field (early iterations double as
    initial estimates for downstream high-resolution inversion).  If the
    data residual norm increases on two consecutive outer iterations, the
    most recent update is halved and the iteration flagged.
    """
    u = np.full(grid.num_nodes, 1.0 / config.c0)  # nodal slowness
    ds = config.ds if config.ds is not None else grid.spacing
    tau = config.tau if config.tau is not None else grid.spacing / 20.0
    fields: list[ScalarField] = []
    log: list[OuterIterationRecord] = []
    warm = None
    prev_res_norm = None
    increases = 0
    converged = False
    truth_vals = None if truth is None else truth.flat

    for outer in range(1, config.outer_iterations + 1):
        field = ScalarField(grid, 1.0 / u, "sound-speed")
        links = link_all(
            geometry,
            field.with_values(u, "slowness"),
            ds=ds,
            tau=tau,
            backend=config.backend,
            warm_starts=warm,
            max_iterations=config.max_link_iterations,
            threads=config.threads,
        )
        warm = links.angle_table()
        system = assemble_system(links, measured, grid, u, config.backend)
        if config.solver == "sart":
            du = sart_solve(system, config.inner_iterations, config.relaxation)
        else:
            du = cg_solve(system, config.inner_iterations)

        res_norm = float(np.linalg.norm(system.residual))
        halved = False
        if prev_res_norm is not None and res_norm > prev_res_norm:
            increases += 1
            if increases >= 2:
                du = 0.5 * du
                halved = True
                increases = 0
        else:
            increases = 0
        prev_res_norm = res_norm

        u = u + du
        field = ScalarField(grid, 1.0 / u, "sound-speed")
        fields.append(field)
        upd_rel = float(np.linalg.norm(du) / np.linalg.norm(u))
        iters = np.array([res.iterations for res in links])
        log.append(
            OuterIterationRecord(
                iteration=outer,
                residual_norm=res_norm,
                update_norm=upd_rel,
                rmse_vs_truth=(
                    rmse(field.flat, truth_vals) if truth_vals is not None else float("nan")
                ),
                halved=halved,
                link_convergence=links.convergence_rate,
                median_link_iterations=float(np.median(iters)),
            )
        )
        if upd_rel < config.stop_threshold:
            converged = True
            break
    return ReconstructionResult(fields=fields, log=log, converged=converged)

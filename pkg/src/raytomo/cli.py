"""Command-line front end.

Subcommands: validate-fisheye | trace | link | synth | reconstruct | greens.
Each reads a TOML config (``--config``), writes CSV / binary-field artifacts
into ``--out`` (default: current directory), and returns exit code 0 only
when every requested computation succeeded; partial failures enumerate the
failing pairs or rays on stderr.  All numeric CSVs carry a header row and
17-significant-digit values.  Identical config and seed produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .fisheye import DEFAULT_RATIOS, ExperimentSpec, sweep, sweep_to_csv
from .grid import GridSpec, ScalarField, load_field, save_field
from .invert import InversionConfig, ToFTable, reconstruct, synth_tofs
from .linking import ArrayGeometry, LinkProblem, link_all, link_broyden, link_secant, ring_array, sphere_array
from .interp import get_sampler
from .paraxial import compute_greens_params, trace_paraxial, perpendicular_basis
from .phantom import Blob, PhantomSpec, rasterize
from .tracer import (
    RayState,
    StepAlgorithm,
    StopCondition,
    dump_trajectory_csv,
    trace,
)


class ConfigError(ValueError):
    pass


def _take(table: dict, context: str, **handlers):
    """Pull known keys out of a config table; reject unknown keys."""
    unknown = set(table) - set(handlers)
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{context}]: {', '.join(sorted(unknown))}"
        )
    out = {}
    for key, default in handlers.items():
        out[key] = table.get(key, default)
    return out


def _require(table: dict, context: str, key: str):
    if key not in table:
        raise ConfigError(f"missing required key '{key}' in [{context}]")
    return table[key]


def _load_config(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _build_grid(table: dict, context: str = "grid") -> GridSpec:
    t = _take(table, context, origin=None, spacing=None, counts=None)
    for key in ("origin", "spacing", "counts"):
        if t[key] is None:
            raise ConfigError(f"missing required key '{key}' in [{context}]")
    return GridSpec(tuple(t["origin"]), float(t["spacing"]), tuple(t["counts"]))


def _build_field(table: dict, context: str = "field") -> ScalarField:
    """Field from either a binary-field path or an analytic phantom + grid."""
    if "path" in table:
        t = _take(table, context, path=None, kind="refractive-index")
        return load_field(t["path"], t["kind"])
    t = _take(
        table, context,
        variant=None, a=1.0, n0=1.0, c0=1500.0, blobs=[], grid=None,
    )
    if t["variant"] is None:
        raise ConfigError(f"[{context}] needs either 'path' or 'variant'")
    if t["grid"] is None:
        raise ConfigError(f"missing [{context}.grid] table")
    blobs = tuple(
        Blob(tuple(b["center"]), float(b["radius"]), float(b["amplitude"]))
        for b in t["blobs"]
    )
    phantom = PhantomSpec(
        variant=t["variant"], a=float(t["a"]), n0=float(t["n0"]),
        c0=float(t["c0"]), blobs=blobs,
    )
    return rasterize(phantom, _build_grid(t["grid"], f"{context}.grid"))


def _build_array(table: dict, dim_hint: int | None = None) -> ArrayGeometry:
    t = _take(
        table, "array",
        layout=None, n_elements=None, radius=None, center=None, n_receivers=None,
    )
    layout = _require(table, "array", "layout")
    n = int(_require(table, "array", "n_elements"))
    radius = float(_require(table, "array", "radius"))
    if layout == "ring":
        center = tuple(t["center"]) if t["center"] else (0.0, 0.0)
        return ring_array(n, radius, center, t["n_receivers"])
    if layout == "sphere":
        center = tuple(t["center"]) if t["center"] else (0.0, 0.0, 0.0)
        return sphere_array(n, radius, center, t["n_receivers"])
    raise ConfigError(f"unknown array layout {layout!r}")


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_validate_fisheye(args, config: dict) -> int:
    t = _take(
        config, "top level", validate=None,
    )
    v = _take(
        t["validate"] or {}, "validate",
        dim=2, experiment="radius", ratios=list(DEFAULT_RATIOS),
        algorithms=[a.value for a in StepAlgorithm], a=1.0,
    )
    spec = ExperimentSpec(
        dim=int(v["dim"]),
        experiment=v["experiment"],
        algorithms=tuple(v["algorithms"]),
        ratios=tuple(float(r) for r in v["ratios"]),
        a=float(v["a"]),
    )
    results = sweep(spec)
    path = _out_path(args, f"fisheye_{spec.experiment}_{spec.dim}d.csv")
    sweep_to_csv(path, results)
    print(f"wrote {path} ({len(results)} rows)")
    failed = [r for r in results if r.failures]
    for r in failed:
        print(
            f"FAIL {r.algorithm.value} ratio={r.ratio:g}: "
            f"{r.failures}/{r.ray_count} rays did not terminate",
            file=sys.stderr,
        )
    return 1 if failed else 0


def cmd_trace(args, config: dict) -> int:
    top = _take(config, "top level", field=None, trace=None)
    if top["field"] is None or top["trace"] is None:
        raise ConfigError("trace needs [field] and [trace] tables")
    field = _build_field(top["field"])
    t = _take(
        top["trace"], "trace",
        start=None, direction=None, ds=None, algorithm="runge-kutta-2",
        backend="bspline", max_steps=200_000, thin=4, closed_loop=False,
    )
    start = _require(top["trace"], "trace", "start")
    direction = _require(top["trace"], "trace", "direction")
    ds = float(t["ds"]) if t["ds"] is not None else field.spec.spacing
    traj = trace(
        RayState(np.asarray(start, float), np.asarray(direction, float)),
        ds,
        field,
        algorithm=StepAlgorithm(t["algorithm"]),
        stop=StopCondition(max_steps=int(t["max_steps"]), closed_loop=bool(t["closed_loop"])),
        backend=t["backend"],
    )
    path = _out_path(args, "trajectory.csv")
    dump_trajectory_csv(path, traj, every=int(t["thin"]))
    print(f"wrote {path} ({traj.num_points} samples, termination: {traj.termination})")
    return 0


def cmd_link(args, config: dict) -> int:
    top = _take(config, "top level", field=None, array=None, link=None)
    if top["field"] is None or top["array"] is None:
        raise ConfigError("link needs [field] and [array] tables")
    field = _build_field(top["field"])
    geometry = _build_array(top["array"])
    t = _take(
        top["link"] or {}, "link",
        ds=None, tau=None, backend="bilinear", algorithm="runge-kutta-2",
        max_iterations=None,
    )
    table = link_all(
        geometry, field,
        ds=t["ds"], tau=t["tau"], backend=t["backend"],
        algorithm=StepAlgorithm(t["algorithm"]),
        max_iterations=t["max_iterations"], threads=args.threads,
    )
    path = _out_path(args, "links.csv")
    table.to_csv(path, field=field, backend=t["backend"])
    failed = [res for res in table if not res.converged]
    print(
        f"wrote {path} ({len(table)} pairs, "
        f"{100 * table.convergence_rate:.1f}% converged)"
    )
    for res in failed:
        print(
            f"FAIL pair ({res.emitter_id}, {res.receiver_id}): "
            f"residual {res.residual_norm:.3g} after {res.iterations} iterations",
            file=sys.stderr,
        )
    return 1 if failed else 0


def cmd_synth(args, config: dict) -> int:
    top = _take(config, "top level", field=None, array=None, synth=None)
    if top["field"] is None or top["array"] is None:
        raise ConfigError("synth needs [field] and [array] tables")
    field = _build_field(top["field"])
    geometry = _build_array(top["array"])
    t = _take(
        top["synth"] or {}, "synth",
        noise_sigma=0.0, ds=None, backend="bilinear",
    )
    table = synth_tofs(
        field, geometry,
        ds=t["ds"], backend=t["backend"],
        noise_sigma=float(t["noise_sigma"]),
        rng=np.random.default_rng(args.seed),
    )
    tof_path = _out_path(args, "tofs.csv")
    table.to_csv(tof_path)
    field_path = _out_path(args, "true_field.rtf")
    save_field(field_path, field)
    invalid = np.flatnonzero(~table.valid)
    print(f"wrote {tof_path} ({len(table)} pairs) and {field_path}")
    for k in invalid:
        print(
            f"FAIL pair ({table.emitter_id[k]}, {table.receiver_id[k]}): no linked ray",
            file=sys.stderr,
        )
    return 1 if len(invalid) else 0


def cmd_reconstruct(args, config: dict) -> int:
    top = _take(config, "top level", array=None, grid=None, reconstruct=None)
    if top["array"] is None or top["grid"] is None or top["reconstruct"] is None:
        raise ConfigError("reconstruct needs [array], [grid] and [reconstruct] tables")
    geometry = _build_array(top["array"])
    grid = _build_grid(top["grid"])
    t = _take(
        top["reconstruct"], "reconstruct",
        tofs=None, solver="sart", inner_iterations=None, outer_iterations=5,
        c0=1500.0, relaxation=1.0, stop_threshold=1e-4, ds=None,
        backend="bilinear", tau=None, max_link_iterations=20,
    )
    tof_path = _require(top["reconstruct"], "reconstruct", "tofs")
    if not os.path.isfile(tof_path):
        raise ConfigError(f"ToF table not found: {tof_path}")
    measured = ToFTable.from_csv(tof_path)
    cfg = InversionConfig(
        solver=t["solver"],
        inner_iterations=t["inner_iterations"],
        outer_iterations=int(t["outer_iterations"]),
        c0=float(t["c0"]),
        relaxation=float(t["relaxation"]),
        stop_threshold=float(t["stop_threshold"]),
        ds=t["ds"],
        backend=t["backend"],
        tau=t["tau"],
        max_link_iterations=int(t["max_link_iterations"]),
        threads=args.threads,
    )
    result = reconstruct(measured, geometry, grid, cfg)
    for k, f in enumerate(result.fields, start=1):
        save_field(_out_path(args, f"recon_{k:02d}.rtf"), f)
    save_field(_out_path(args, "recon.rtf"), result.fields[-1])
    log_path = _out_path(args, "run_log.csv")
    result.log_to_csv(log_path)
    last = result.log[-1]
    print(
        f"wrote recon.rtf and {log_path} "
        f"({len(result.log)} outer iterations, final residual {last.residual_norm:.6g})"
    )
    if last.link_convergence < 1.0:
        print(
            f"FAIL: {100 * (1 - last.link_convergence):.1f}% of pairs did not link "
            "in the final iteration",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_greens(args, config: dict) -> int:
    top = _take(config, "top level", field=None, greens=None)
    if top["field"] is None or top["greens"] is None:
        raise ConfigError("greens needs [field] and [greens] tables")
    field = _build_field(top["field"])
    t = _take(
        top["greens"], "greens",
        emitter=None, receiver=None, center=None, radius=None,
        omega=None, y=1.1, alpha0=0.0, ds=None, tau=None, overlay_scale=0.01,
    )
    for key in ("emitter", "receiver", "center", "radius", "omega"):
        _require(top["greens"], "greens", key)
    ds = float(t["ds"]) if t["ds"] is not None else field.spec.spacing
    if field.kind == "sound-speed":
        index_field = field.with_values(1.0 / field.flat, "slowness")
        speed_field = field
    else:
        index_field = field
        speed_field = None
    problem = LinkProblem(
        emitter=np.asarray(t["emitter"], float),
        receiver=np.asarray(t["receiver"], float),
        sampler=get_sampler(index_field, "bspline"),
        center=np.asarray(t["center"], float),
        radius=float(t["radius"]),
        ds=ds,
        tau=float(t["tau"]) if t["tau"] is not None else field.spec.spacing,
    )
    link = link_secant(problem) if problem.dim == 2 else link_broyden(problem)
    if not link.converged or link.trajectory is None:
        print(
            f"FAIL: ray did not link (residual {link.residual_norm:.3g} "
            f"after {link.iterations} iterations)",
            file=sys.stderr,
        )
        return 1
    traj = link.trajectory
    alpha0_field = None
    if float(t["alpha0"]) > 0:
        alpha0_field = field.with_values(
            np.full(field.spec.num_nodes, float(t["alpha0"])),
            "absorption-coefficient",
        )
    params = compute_greens_params(
        traj, index_field, omega=float(t["omega"]), y=float(t["y"]),
        alpha0_field=alpha0_field, sound_speed_field=speed_field,
    )
    path = _out_path(args, "greens.csv")
    params.to_csv(path)

    # overlay: reference ray plus the paraxially displaced ray x + eps * dx
    eps = float(t["overlay_scale"])
    par = trace_paraxial(traj, index_field, dd0=perpendicular_basis(traj.directions[0])[0])
    overlay_path = _out_path(args, "ray_overlay.csv")
    dim = traj.dim
    cols = (
        ["s", "T"]
        + [f"x{k + 1}" for k in range(dim)]
        + [f"x{k + 1}_displaced" for k in range(dim)]
    )
    arc = traj.arc
    disp = traj.positions + eps * par.dx
    with open(overlay_path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for m in range(traj.num_points):
            vals = [f"{arc[m]:.17g}", f"{params.times[m]:.17g}"]
            vals += [f"{c:.17g}" for c in traj.positions[m]]
            vals += [f"{c:.17g}" for c in disp[m]]
            fh.write(",".join(vals) + "\n")
    print(f"wrote {path} and {overlay_path} ({traj.num_points} samples)")
    return 0


_COMMANDS = {
    "validate-fisheye": cmd_validate_fisheye,
    "trace": cmd_trace,
    "link": cmd_link,
    "synth": cmd_synth,
    "reconstruct": cmd_reconstruct,
    "greens": cmd_greens,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raytomo",
        description="Bent-ray transmission ultrasound tomography toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="RNG seed (synthetic noise)")
        p.add_argument(
            "--threads", type=int, default=os.cpu_count(),
            help="worker thread cap (default: available cores)",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        return _COMMANDS[args.command](args, config)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

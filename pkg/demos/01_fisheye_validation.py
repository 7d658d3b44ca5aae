"""Validation sweep on the Maxwell fish-eye lens.

The lens n(r) = n0 / (1 + (r/a)^2) bends every ray launched from a point on
the unit sphere into a perfect circle, so both the circle radius and the
accumulated acoustic length have closed forms.  This script traces the
radius and length experiments in 2D over all four steppers and a range of
step-to-grid ratios, then prints the error table and writes it to CSV.

Run:  python3 demos/01_fisheye_validation.py [outdir]
"""

import os
import sys

from raytomo.fisheye import ExperimentSpec, fisheye_field, sweep, sweep_to_csv

outdir = sys.argv[1] if len(sys.argv) > 1 else "."
os.makedirs(outdir, exist_ok=True)

field = fisheye_field(2)
for experiment in ("radius", "length"):
    spec = ExperimentSpec(2, experiment, ratios=(4.0, 2.0, 1.0, 0.5))
    results = sweep(spec, field)
    print(f"\n{experiment} experiment (errors in percent)")
    print(f"{'algorithm':>16} " + " ".join(f"{r:>10g}" for r in spec.ratios))
    for alg in spec.algorithms:
        row = [r.metric for r in results if r.algorithm == alg]
        print(f"{alg.value:>16} " + " ".join(f"{v:10.5f}" for v in row))
    path = f"{outdir}/fisheye_{experiment}_2d.csv"
    sweep_to_csv(path, results)
    print(f"wrote {path}")

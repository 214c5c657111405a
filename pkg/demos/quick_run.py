"""Plan a five-target tour end to end and print the stage totals and legs.

    python demos/quick_run.py [output_dir]

Takes well under a minute on one core.
"""
import sys

from adrtour.orbital import DAY
from adrtour.pipeline import RunConfig, emit_report, run_pipeline


def main(out_dir="quick-run"):
    cfg = RunConfig(n_targets=5, horizon_days=2.5, sa_restarts=5, sa_plateau=500,
                    de_islands=4, de_fixed_evals=10_000, de_free_islands=4,
                    de_free_evals=40_000, seed=7, output_dir=out_dir)
    report = run_pipeline(cfg)
    for stage in ("sa", "time_fixed", "time_free"):
        print(f"{stage:>10}  {report.costs[stage]:.5f} km/s")
    plan = report.plans["time_free"]
    print("\nleg  target  t [day]  dv [km/s]")
    for k, (i, t, dv) in enumerate(zip(plan.ids, plan.epochs_s, plan.leg_dv), 1):
        print(f"{k:3d}  {i:6d}  {t / DAY:7.4f}  {dv:.5f}")
    for path in emit_report(report, out_dir):
        print("wrote", path)


if __name__ == "__main__":
    main(*sys.argv[1:])

"""Compare the phasing estimate with an optimized four-impulse leg.

    python demos/heuristic_sweep.py [t_max_in_periods] [step_deg]

Sweeps the target's initial phase for a 7000 -> 7140 km transfer and prints
(phase, estimate, optimum, gap) rows as CSV.
"""
import math
import sys

from adrtour.de import DEConfig, de_optimize
from adrtour.heuristic import leg_cost_estimate
from adrtour.leg import leg_batch, leg_bounds
from adrtour.orbital import MU_EARTH, Body


def main(periods="7", step="30"):
    r1, r2 = 7000.0, 7140.0
    t_max = float(periods) * 2 * math.pi * math.sqrt(r1**3 / MU_EARTH)
    chaser, box = Body(0, r1, 0.0), leg_bounds([r1, r2])
    print("phase_deg,estimate_kms,optimum_kms,gap")
    for deg in range(0, 360, int(step)):
        target = Body(1, r2, math.radians(deg))
        est, _ = leg_cost_estimate(chaser, target, 0.0, t_max)
        phi = target.angle(t_max)
        _, opt, _ = de_optimize(lambda X: leg_batch(r1, 0.0, r2, phi, 0.0, t_max, X, MU_EARTH),
                                box, DEConfig(n_islands=8, max_evals=100_000, seed=deg),
                                vectorized=True)
        print(f"{deg},{est:.6f},{opt:.6f},{abs(est - opt) / est:.4f}")


if __name__ == "__main__":
    main(*sys.argv[1:])

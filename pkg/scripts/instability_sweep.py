"""Sweep load velocity and local order for extended matrix interpolation on the
combined load/sensor beam and count steps with an unstable interpolated pencil.

    python3 scripts/instability_sweep.py [--full]
"""

import argparse
import dataclasses

from mortv.scenario import MethodConfig, build_scenario, load_config, run_method
from mortv.simulation import simulate_full


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--full", action="store_true")
    ap.add_argument("--velocities", default="5,11,30")
    ap.add_argument("--orders", default="10,20,40")
    ap.add_argument("--samples", type=int, default=20)
    args = ap.parse_args()
    base = load_config("beam_L50_combined.cfg")
    if not args.full:
        base = base.desk()
    print(f"{'v':>6} {'r':>4} {'status':>16} {'unstable':>9} {'first':>7} {'rel L2':>10}")
    for v in map(float, args.velocities.split(",")):
        cfg = dataclasses.replace(base, trajectory=dataclasses.replace(base.trajectory, velocity=v))
        sys, sim = build_scenario(cfg)
        ref = simulate_full(sys, sim)
        for r in map(int, args.orders.split(",")):
            m = MethodConfig(name="matrint", mode="extended", r=r, k=args.samples)
            res = run_method(sys, sim, ref, m, m.display)
            first = "" if res.first_unstable_step is None else res.first_unstable_step
            print(f"{v:>6g} {r:>4} {res.status:>16} {res.unstable_steps:>9} {first!s:>7} {res.rel_l2:>10.3e}")


if __name__ == "__main__":
    main()

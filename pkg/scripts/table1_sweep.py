"""Run the four moving-load beam scenarios and print one error table.

    python3 scripts/table1_sweep.py [--desk] [--out out/table1]
"""

import argparse
from pathlib import Path

from mortv.scenario import load_config, run_scenario

LABELS = ("MatrInt V(p)", "MatrInt Vdot,Tdot", "MatrInt W", "approx B + IRKA")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--desk", action="store_true")
    ap.add_argument("--out", default="out/table1")
    args = ap.parse_args()
    print(f"{'v [m/s]':>8}  " + "  ".join(f"{l:>18}" for l in LABELS))
    for v in (1, 5, 10, 20):
        cfg = load_config(f"beam_table1_v{v}.cfg")
        if args.desk:
            cfg = cfg.desk()
        rows = {r.label: r for r in run_scenario(cfg, Path(args.out) / f"v{v}").rows}
        cells = []
        for l in LABELS:
            r = rows[l]
            mark = "" if r.stable else "*"
            cells.append(f"{r.abs_l2:>17.3e}{mark or ' '}")
        print(f"{v:>8}  " + "  ".join(cells))
    print("* interpolated pencil unstable in at least one step")


if __name__ == "__main__":
    main()

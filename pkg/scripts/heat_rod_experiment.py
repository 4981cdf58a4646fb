"""Moving heat source on a 1D rod: four reductions against the full model.

    python3 scripts/heat_rod_experiment.py [--desk] [--out out/heat_rod]

Writes trajectories, report.csv/report.txt and a gnuplot script.
"""

import argparse

from mortv.scenario import load_config, run_scenario


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--desk", action="store_true")
    ap.add_argument("--out", default="out/heat_rod")
    args = ap.parse_args()
    cfg = load_config("heat_rod.cfg")
    if args.desk:
        cfg = cfg.desk()
    run_scenario(cfg, args.out)
    with open(f"{args.out}/report.txt") as fh:
        print(fh.read(), end="")


if __name__ == "__main__":
    main()

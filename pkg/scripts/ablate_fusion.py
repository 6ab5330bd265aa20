#!/usr/bin/env python3
"""Map-fusion ablation on the bundled synthetic benchmark: train with and
without SD-map fusion across seeds and tabulate the evaluation metrics.

Usage::

    python3 scripts/ablate_fusion.py [--seeds 0 1 2]
"""

import argparse
import statistics

from mapkit.benchmark import fusion_ablation
from mapkit.metrics import MetricReport


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    results = fusion_ablation(tuple(args.seeds))
    print(f"run,seed,{MetricReport.CSV_HEADER}")
    for label, reports in results.items():
        for seed, rep in zip(args.seeds, reports):
            print(f"{label},{seed},{rep.csv_row()}")
    med_on = statistics.median(r.det_l for r in results["fusion_on"])
    med_off = statistics.median(r.det_l for r in results["fusion_off"])
    print(f"# median det_l: fusion_on={med_on:.4f} fusion_off={med_off:.4f}")


if __name__ == "__main__":
    main()

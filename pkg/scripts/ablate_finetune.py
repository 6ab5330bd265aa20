#!/usr/bin/env python3
"""Topology fine-tuning ablation: train a base model per seed, then
fine-tune only the topology heads with the backbone frozen, and compare
lane-traffic topology scores.

Usage::

    python3 scripts/ablate_finetune.py [--seeds 0 1 2]
"""

import argparse
import statistics

from mapkit.benchmark import finetune_ablation
from mapkit.metrics import MetricReport


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    results = finetune_ablation(tuple(args.seeds))
    print(f"run,seed,{MetricReport.CSV_HEADER}")
    for label, reports in results.items():
        for seed, rep in zip(args.seeds, reports):
            print(f"{label},{seed},{rep.csv_row()}")
    med_b = statistics.median(r.top_lt for r in results["base"])
    med_f = statistics.median(r.top_lt for r in results["finetuned"])
    print(f"# median top_lt: base={med_b:.4f} finetuned={med_f:.4f}")


if __name__ == "__main__":
    main()

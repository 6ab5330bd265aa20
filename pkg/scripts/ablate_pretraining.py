#!/usr/bin/env python3
"""Encoder-pretraining ablation: compare final task loss and lane
detection between a pretrained map-encoder initialization and a random
one, per seed.

Usage::

    python3 scripts/ablate_pretraining.py [--seeds 0 1 2]
"""

import argparse

from mapkit.benchmark import pretraining_ablation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    results = pretraining_ablation(tuple(args.seeds))
    print("seed,init,final_loss,det_l,olus")
    wins = 0
    for i, seed in enumerate(args.seeds):
        loss_p, rep_p = results["pretrained"][i]
        loss_r, rep_r = results["random"][i]
        print(f"{seed},pretrained,{loss_p:.4f},{rep_p.det_l:.4f},{rep_p.olus:.4f}")
        print(f"{seed},random,{loss_r:.4f},{rep_r.det_l:.4f},{rep_r.olus:.4f}")
        wins += loss_p <= loss_r and rep_p.det_l >= rep_r.det_l
    print(f"# pretrained wins (loss and det_l) in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()

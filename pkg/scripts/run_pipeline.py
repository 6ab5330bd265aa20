#!/usr/bin/env python3
"""Run the full pipeline on one config: data generation, encoder
pretraining, training (with the pretrained encoder), topology fine-tuning,
and a final evaluation report.

Usage::

    python3 scripts/run_pipeline.py --workdir runs/demo [--config my.cfg]
                                    [--seed 0]
"""

import argparse
import sys
from pathlib import Path

from mapkit.cli import main as mapkit
from mapkit.config import format_run_config, load_run_config, RunConfig
from dataclasses import replace


def run(argv):
    code = mapkit([str(a) for a in argv])
    if code != 0:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--workdir", required=True)
    ap.add_argument("--config", default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    cfg = load_run_config(args.config)
    cfg = replace(cfg, data_dir=str(work / "data"))

    stage_cfg = work / "stage.cfg"
    stage_cfg.write_text(format_run_config(cfg))
    run(["gen-data", "--config", stage_cfg, "--seed", args.seed,
         "--out", work / "data", "--force"])
    run(["pretrain", "--config", stage_cfg, "--seed", args.seed,
         "--out", work / "pretrain", "--force"])

    cfg = replace(cfg, encoder_ckpt=str(work / "pretrain/encoder.json"))
    stage_cfg.write_text(format_run_config(cfg))
    run(["train", "--config", stage_cfg, "--seed", args.seed,
         "--out", work / "train", "--force"])

    cfg = replace(cfg, init_ckpt=str(work / "train/model.json"))
    stage_cfg.write_text(format_run_config(cfg))
    run(["finetune-topology", "--config", stage_cfg, "--seed", args.seed,
         "--out", work / "finetune", "--force"])

    cfg = replace(cfg, model_ckpt=str(work / "finetune/model.json"))
    stage_cfg.write_text(format_run_config(cfg))
    run(["eval", "--config", stage_cfg, "--seed", args.seed,
         "--out", work / "final-eval", "--force"])
    run(["report", "--out", work])


if __name__ == "__main__":
    main()

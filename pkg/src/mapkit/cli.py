"""Command-line entry point.

Subcommands::

    mapkit gen-data            write train/eval scene corpora
    mapkit pretrain            self-supervised map-encoder pretraining
    mapkit train               full model training
    mapkit finetune-topology   topology heads only, backbone frozen
    mapkit eval                evaluate a checkpoint (or replay ground truth)
    mapkit report              tabulate metrics.csv files under a directory

All subcommands share ``--config <path>``, ``--seed <int>``, ``--out <dir>``
and ``--force``; every run echoes its fully resolved configuration into the
output directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, format_run_config, load_run_config
from .metrics import MetricReport
from .nn.checkpoint import CheckpointError, load_params, save_params
from .scene import SceneValidationError
from .scenegen import generate_corpus, load_corpus
from .train import (evaluate_model, load_model, oracle_prediction,
                    pretrain_encoder, save_model, train_model,
                    write_metrics_csv)

TRAIN_SUBDIR = "train"
EVAL_SUBDIR = "eval"
EVAL_SEED_OFFSET = 100_000


class CliError(RuntimeError):
    pass


def _prepare_out(args, artifacts: list[str]) -> Path:
    out = Path(args.out)
    existing = [a for a in artifacts if (out / a).exists()]
    if existing and not args.force:
        raise CliError(f"{out} already contains {existing}; "
                       "pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig, out: Path) -> None:
    (out / "config_echo.txt").write_text(format_run_config(cfg),
                                         encoding="utf-8")


def _load_split(cfg: RunConfig, split: str):
    manifest = Path(cfg.data_dir) / split / "manifest.json"
    if not manifest.exists():
        raise CliError(f"no corpus at {manifest}; run 'mapkit gen-data' "
                       f"with data_dir = {cfg.data_dir}")
    return load_corpus(manifest)


def cmd_gen_data(args) -> None:
    cfg = load_run_config(args.config)
    out = _prepare_out(args, [f"{TRAIN_SUBDIR}/manifest.json",
                              f"{EVAL_SUBDIR}/manifest.json"])
    _echo_config(cfg, out)
    generate_corpus(cfg.gen_config(cfg.n_train_scenes), out / TRAIN_SUBDIR,
                    base_seed=args.seed, force=args.force)
    generate_corpus(cfg.gen_config(cfg.n_eval_scenes), out / EVAL_SUBDIR,
                    base_seed=args.seed + EVAL_SEED_OFFSET, force=args.force)
    print(f"wrote {cfg.n_train_scenes} train / {cfg.n_eval_scenes} eval "
          f"scenes to {out}")


def cmd_pretrain(args) -> None:
    cfg = load_run_config(args.config)
    out = _prepare_out(args, ["encoder.json"])
    _echo_config(cfg, out)
    scenes = _load_split(cfg, TRAIN_SUBDIR)
    enc, log = pretrain_encoder(scenes, cfg, args.seed)
    save_params(enc, out / "encoder.json",
                config={"run_config": format_run_config(cfg)})
    (out / "pretrain_log.csv").write_text(
        "epoch,loss\n" + "".join(f"{i},{v:.8f}\n" for i, v in enumerate(log)),
        encoding="utf-8")
    print(f"pretrained ({cfg.pretrain_mode}) for {len(log)} epochs, "
          f"final loss {log[-1]:.6f} -> {out / 'encoder.json'}")


def cmd_train(args) -> None:
    cfg = load_run_config(args.config)
    out = _prepare_out(args, ["model.json", "metrics.csv"])
    _echo_config(cfg, out)
    train_scenes = _load_split(cfg, TRAIN_SUBDIR)
    eval_scenes = _load_split(cfg, EVAL_SUBDIR)
    encoder = load_params(cfg.encoder_ckpt)[0] if cfg.encoder_ckpt else None
    result = train_model(train_scenes, eval_scenes, cfg, args.seed,
                         encoder_params=encoder)
    save_model(result.params, cfg, out / "model.json")
    write_metrics_csv(result.history, out / "metrics.csv")
    last = result.history[-1]
    print(f"trained {cfg.epochs} epochs; final "
          f"{MetricReport.CSV_HEADER} = {last.csv_row()}")


def cmd_finetune_topology(args) -> None:
    cfg = load_run_config(args.config)
    if not cfg.init_ckpt:
        raise CliError("finetune-topology needs init_ckpt in the config")
    out = _prepare_out(args, ["model.json", "metrics.csv"])
    _echo_config(cfg, out)
    train_scenes = _load_split(cfg, TRAIN_SUBDIR)
    eval_scenes = _load_split(cfg, EVAL_SUBDIR)
    init = load_model(cfg.init_ckpt)
    result = train_model(train_scenes, eval_scenes, cfg, args.seed,
                         init_params=init, topology_only=True)
    save_model(result.params, cfg, out / "model.json")
    write_metrics_csv(result.history, out / "metrics.csv")
    print(f"fine-tuned topology heads for {cfg.topo_epochs} epochs; final "
          f"{MetricReport.CSV_HEADER} = {result.history[-1].csv_row()}")


def cmd_eval(args) -> None:
    cfg = load_run_config(args.config)
    out = _prepare_out(args, ["metrics.csv"])
    _echo_config(cfg, out)
    scenes = _load_split(cfg, EVAL_SUBDIR)
    if cfg.eval_oracle:
        from .metrics import evaluate
        report = evaluate(scenes, [oracle_prediction(s) for s in scenes])
    else:
        if not cfg.model_ckpt:
            raise CliError("eval needs model_ckpt in the config "
                           "(or eval_oracle = true)")
        params = load_model(cfg.model_ckpt)
        report = evaluate_model(params, scenes, cfg.model_config())
    write_metrics_csv([report], out / "metrics.csv")
    print(MetricReport.CSV_HEADER)
    print(report.csv_row())


def cmd_report(args) -> None:
    root = Path(args.out)
    if not root.is_dir():
        raise CliError(f"{root} is not a directory")
    from .train import read_metrics_csv
    rows = []
    for csv in sorted(root.glob("*/metrics.csv")):
        history = read_metrics_csv(csv)
        if history:
            rows.append((csv.parent.name, history[-1]))
    if not rows:
        raise CliError(f"no metrics.csv files under {root}")
    width = max(len(label) for label, _ in rows)
    print(f"{'run'.ljust(width)},{MetricReport.CSV_HEADER}")
    for label, report in sorted(rows):
        print(f"{label.ljust(width)},{report.csv_row()}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mapkit",
        description="SD-map-conditioned lane topology pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": cmd_gen_data,
        "pretrain": cmd_pretrain,
        "train": cmd_train,
        "finetune-topology": cmd_finetune_topology,
        "eval": cmd_eval,
        "report": cmd_report,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="key = value config file (defaults apply if omitted)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=str, required=True,
                       help="output directory")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")
        p.set_defaults(fn=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (CliError, CheckpointError, SceneValidationError, ValueError,
            FileExistsError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: train, eval, infer and selftest."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .train import TrainConfig, evaluate, infer, model_from_checkpoint, train


def _add_config_arg(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None,
                     help="flat key = value config file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--fusion-mode", dest="fusion_mode", default=None,
                     choices=["concat_res", "concat_res_spatial",
                              "concat_res_channel", "full"])
    sub.add_argument("--preset", default=None, choices=["toy", "paper-shape"])


def _load_config(args: argparse.Namespace) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    for key in ("seed", "epochs", "fusion_mode", "preset"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    cfg.__post_init__()  # re-validate after overrides
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="lesionseg",
        description="Dual-branch CNN+transformer lesion segmentation")
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="train a model")
    _add_config_arg(p_train)
    p_train.add_argument("--resume", type=Path, default=None,
                         help="checkpoint to continue from")

    p_eval = subs.add_parser("eval", help="evaluate a checkpoint")
    _add_config_arg(p_eval)
    p_eval.add_argument("checkpoint", type=Path)
    p_eval.add_argument("--out-csv", type=Path, default=None)
    p_eval.add_argument("--out-json", type=Path, default=None)

    p_infer = subs.add_parser("infer", help="segment a single image")
    p_infer.add_argument("checkpoint", type=Path)
    p_infer.add_argument("image", type=Path)
    p_infer.add_argument("--out-dir", type=Path, default=Path("."))
    p_infer.add_argument("--threshold", type=float, default=0.5)

    subs.add_parser("selftest",
                    help="run gradient, oracle and shape suites")

    args = parser.parse_args(argv)

    if args.command == "train":
        cfg = _load_config(args)
        result = train(cfg, resume_from=args.resume)
        print(f"checkpoint written to {result.checkpoint_path}")
        return 0

    if args.command == "eval":
        from .train import _build_datasets
        cfg = _load_config(args)
        model, _ = model_from_checkpoint(args.checkpoint)
        _, val_set = _build_datasets(cfg)
        agg, _ = evaluate(model, val_set, threshold=cfg.threshold,
                          csv_path=args.out_csv, json_path=args.out_json)
        print(f"jaccard={agg.jaccard:.4f} dice={agg.f_measure:.4f} "
              f"accuracy={agg.accuracy:.4f}")
        return 0

    if args.command == "infer":
        mask_path, overlay_path = infer(args.checkpoint, args.image,
                                        args.out_dir, args.threshold)
        print(f"mask: {mask_path}\noverlay: {overlay_path}")
        return 0

    if args.command == "selftest":
        from .selftest import run_all
        return 0 if run_all() else 1

    return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line driver: train, eval, predict, gradcheck.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure (non-finite loss or a gradient check over threshold).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import data as datamod
from . import runtime
from .checkpoint import load_checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    GeometryError,
    Motility3dError,
    NumericsError,
)
from .gradcheck import run_suite
from .models import ARCH_SPECS, CLASS_NAMES
from .tensor import Tensor
from .train import evaluate_checkpoint, load_train_config, train


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_threads(sub):
    sub.add_argument(
        "--threads", type=int, default=1,
        help="BLAS thread limit (default 1: deterministic single-threaded mode)",
    )


def build_parser():
    parser = _Parser(prog="motility3d", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="cmd", required=True)

    p_train = subs.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True, help="path to the TrainConfig JSON")
    p_train.add_argument("--out", help="override the config's output directory")
    _add_threads(p_train)

    p_eval = subs.add_parser("eval", help="evaluate a checkpoint on one split part")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--part", required=True, choices=("train", "val", "test"))
    p_eval.add_argument("--tabular", help="clinical CSV (tabular architectures)")
    p_eval.add_argument("--tabular-delimiter", help="tabular CSV delimiter")
    p_eval.add_argument("--manifest-delimiter", help="manifest CSV delimiter")
    _add_threads(p_eval)

    p_pred = subs.add_parser("predict", help="classify one frames directory")
    p_pred.add_argument("--ckpt", required=True)
    p_pred.add_argument("--frames", required=True, help="directory of frame_%%05d images")
    p_pred.add_argument("--tabular", help="clinical CSV (tabular architectures)")
    p_pred.add_argument("--id", help="participant id selecting the tabular row")
    p_pred.add_argument("--tabular-delimiter", help="tabular CSV delimiter")
    _add_threads(p_pred)

    p_gc = subs.add_parser("gradcheck", help="finite-difference check every op")
    p_gc.add_argument("--arch", required=True, choices=sorted(ARCH_SPECS))
    p_gc.add_argument("--seed", type=int, default=0)
    _add_threads(p_gc)

    return parser


def _cmd_train(args):
    cfg = load_train_config(args.config)
    if args.out:
        cfg.out_dir = os.path.abspath(args.out)
    ckpt_path, history = train(cfg)
    best = min(history, key=lambda m: m.val_loss)
    print(
        json.dumps(
            {
                "checkpoint": ckpt_path,
                "epochs_run": len(history),
                "best_epoch": best.epoch,
                "best_val_loss": best.val_loss,
                "best_val_acc": best.val_acc,
            }
        )
    )
    return 0


def _cmd_eval(args):
    model, meta = load_checkpoint(args.ckpt)
    loss, acc, confusion = evaluate_checkpoint(
        model,
        meta,
        args.manifest,
        args.part,
        tabular_path=args.tabular,
        manifest_delimiter=args.manifest_delimiter,
        tabular_delimiter=args.tabular_delimiter,
    )
    print(
        json.dumps(
            {
                "part": args.part,
                "accuracy": acc,
                "mean_loss": loss,
                "confusion": confusion.tolist(),
            }
        )
    )
    return 0


def _cmd_predict(args):
    model, meta = load_checkpoint(args.ckpt)
    clip = datamod.load_clip(
        args.frames,
        frame_count=int(meta.get("frame_count", 50)),
        frame_size=None if meta.get("frame_size") is None else tuple(meta["frame_size"]),
        fit=bool(meta.get("fit_frames", False)),
    )
    clip_t = Tensor(clip[np.newaxis])
    tab_t = None
    if model.spec.uses_tabular:
        if not args.tabular or not args.id:
            raise ConfigError(
                f"{model.spec.arch_id} checkpoints require --tabular and --id"
            )
        stats_meta = meta.get("tabular_stats")
        if not stats_meta:
            raise CheckpointError("checkpoint lacks tabular normalization statistics")
        records = datamod.load_tabular(
            args.tabular, args.tabular_delimiter or meta.get("tabular_delimiter", ",")
        )
        match = [r for r in records if r.participant_id == args.id]
        if not match:
            raise DataError(f"participant {args.id!r} not found in {args.tabular}")
        stats = datamod.TabularStats(
            mean=np.asarray(stats_meta["mean"], dtype=np.float64),
            std=np.asarray(stats_meta["std"], dtype=np.float64),
        )
        tab_t = Tensor(datamod.standardize(match[0], stats)[np.newaxis])
    elif args.tabular or args.id:
        raise ConfigError(f"{model.spec.arch_id} does not take tabular inputs")

    classes, probs = model.predict(clip_t, tab_t)
    idx = int(classes[0])
    p = probs[0]
    print(
        f'{{"class": "{CLASS_NAMES[idx]}", "index": {idx}, '
        f'"probabilities": [{p[0]:.6f}, {p[1]:.6f}, {p[2]:.6f}]}}'
    )
    return 0


def _cmd_gradcheck(args):
    results = run_suite(args.arch, args.seed)
    failed = False
    for name, err, threshold in results:
        status = "ok" if err <= threshold else "FAIL"
        failed = failed or err > threshold
        print(f"{name}: max_rel_err={err:.3e} threshold={threshold:.0e} {status}")
    if failed:
        print("gradient check FAILED", file=sys.stderr)
        return 3
    print(f"all {len(results)} gradient checks passed")
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        runtime.set_num_threads(args.threads)
        return _HANDLERS[args.cmd](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, GeometryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except Motility3dError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

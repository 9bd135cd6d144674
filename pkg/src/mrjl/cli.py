"""Command-line entry point.

Verbs: synth (build an MLR corpus), train, eval (CMC/mAP report with
subset/mode sweeps), reconstruct (dump the HR/LR reconstruction pair of one
image), featmap (dump feature response maps). Exit codes: 0 success, 1 usage
or configuration error, 2 data error, 3 numeric fault.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import images
from .configfile import ENV_CONFIG_VAR, build_train_config, parse_config_file
from .data import load_or_scan, read_manifest, synthesize_mlr, validate_corpus
from .dffn import feature_response_map
from .errors import (CheckpointError, ConfigurationError, DataError,
                     NumericFaultError)
from .trainer import TrainConfig, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrjl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize a multi-low-resolution corpus")
    p.add_argument("--root", required=True, help="source corpus root")
    p.add_argument("--lr-camera", required=True, type=int,
                   help="camera whose images get down-sampled")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output corpus root")
    p.add_argument("--rates", default="2,3,4", help="candidate rates, comma separated")
    p.add_argument("--rate-override", type=int, default=None,
                   help="force one rate for every designated image (1 = copy)")
    p.add_argument("--replay", default=None,
                   help="manifest whose per-image rates are reused")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", default=os.environ.get(ENV_CONFIG_VAR),
                   help=f"key=value config file (default ${ENV_CONFIG_VAR})")
    p.add_argument("--preset", choices=("full", "toy"), default="full",
                   help="base config before file/flag overrides")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation")
    p.add_argument("--backbone")
    p.add_argument("--lr-mse", type=float, dest="lr_mse")
    p.add_argument("--lr-reid", type=float, dest="lr_reid")
    p.add_argument("--workers", type=int, default=None,
                   help="intra-op thread bound (loading itself is synchronous)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field by name")

    p = sub.add_parser("eval", help="evaluate retrieval accuracy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("unknown", "known", "both"), default="unknown")
    p.add_argument("--subset", choices=("joint", "hr", "lr", "all"), default="joint")
    p.add_argument("--out", default="report.json", help="report file (JSON)")
    p.add_argument("--protocol", choices=("multishot", "singleshot"), default="multishot")
    p.add_argument("--trials", type=int, default=10,
                   help="gallery resamplings for the single-shot protocol")
    p.add_argument("--no-camera-filter", action="store_true",
                   help="keep same-identity-same-camera gallery entries")
    p.add_argument("--allow-overlap", action="store_true",
                   help="permit train/test identity overlap (self-retrieval)")
    p.add_argument("--dump-features", default=None, metavar="PREFIX",
                   help="write gallery/query feature matrices to PREFIX.{gallery,query}.bin")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("reconstruct", help="dump the reconstruction pair of an image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tag", choices=("hr", "lr2", "lr3", "lr4", "unknown"), default="hr",
                   help="resolution tag of the input (names the output files)")

    p = sub.add_parser("featmap", help="dump feature response maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--branch", choices=("hr", "lr", "both"), default="both")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def cmd_synth(args) -> int:
    rates = tuple(int(r) for r in args.rates.split(",") if r.strip())
    replay = read_manifest(args.replay) if args.replay else None
    manifest = synthesize_mlr(args.root, args.lr_camera, args.seed, args.out,
                              rates=rates, rate_override=args.rate_override,
                              replay_manifest=replay)
    validate_corpus(manifest, allow_train_test_overlap=True)
    n_lr = sum(1 for r in manifest if r.rate > 1)
    print(f"wrote {len(manifest)} images ({n_lr} down-sampled) and manifest to {args.out}")
    return 0


def cmd_train(args) -> int:
    base = TrainConfig.toy() if args.preset == "toy" else TrainConfig()
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    for flag in ("epochs", "seed", "ablation", "backbone", "lr_mse", "lr_reid"):
        value = getattr(args, flag)
        if value is not None:
            overrides[flag] = str(value)
    if args.workers is not None:
        overrides["num_threads"] = str(max(1, args.workers))
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    config = build_train_config(base, file_values, overrides)
    path = train(config, args.data, args.out, resume_from=args.resume)
    print(f"final checkpoint: {path}")
    return 0


def cmd_eval(args) -> int:
    if args.workers is not None:
        import torch
        torch.set_num_threads(max(1, args.workers))
    records = load_or_scan(args.data)
    validate_corpus(records, allow_train_test_overlap=args.allow_overlap)
    models = ev.load_models(args.checkpoint)

    modes = ("unknown", "known") if args.mode == "both" else (args.mode,)
    subset_map = {"joint": ("joint",), "hr": ("hr_only",), "lr": ("lr_only",),
                  "all": ("joint", "hr_only", "lr_only")}
    rows = ev.evaluate_grid(
        args.data, models, modes=modes, subsets=subset_map[args.subset],
        filter_same_camera=not args.no_camera_filter,
        protocol=args.protocol, trials=args.trials, records=records,
    )
    print(ev.format_report(rows))
    ev.write_report(rows, args.out)
    print(f"report written to {args.out}")

    if args.dump_features:
        gallery = [r for r in records if r.split == "gallery"]
        query = [r for r in records if r.split == "query"]
        for name, recs in (("gallery", gallery), ("query", query)):
            feats = ev.extract_features(recs, args.data, models, modes[0])
            ev.save_features(f"{args.dump_features}.{name}.bin", feats)
        print(f"feature matrices written to {args.dump_features}.*.bin")
    return 0


def cmd_reconstruct(args) -> int:
    models = ev.load_models(args.checkpoint)
    tag = args.tag.upper() if args.tag != "unknown" else images.TAG_UNKNOWN
    img = images.load_image(args.image, tag=tag)
    pair = models.rrn.reconstruct(img)
    prefix = {"H": "h", "L": "l", "U": "u"}[tag[0]]
    out = Path(args.out)
    stem = Path(args.image).stem
    hr_path = out / f"{stem}.{prefix}2h.png"
    lr_path = out / f"{stem}.{prefix}2l.png"
    images.save_image(pair.x_hr_hat, hr_path)
    images.save_image(pair.x_lr_hat, lr_path)
    print(f"wrote {hr_path} and {lr_path}")
    return 0


def cmd_featmap(args) -> int:
    models = ev.load_models(args.checkpoint)
    img = images.load_image(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem

    branches = ("hr", "lr") if args.branch == "both" else (args.branch,)
    maps = {}
    for name in branches:
        heat = feature_response_map(img, models.dffn.branch(name))
        maps[name] = heat
        images.save_image(heat.unsqueeze(0).expand(3, -1, -1),
                          out / f"{stem}.featmap.{name}.png")
    if len(maps) == 2:
        gap = np.ones((maps["hr"].shape[0], 4), dtype=np.float32)
        side = np.concatenate([maps["hr"].numpy(), gap, maps["lr"].numpy()], axis=1)
        import torch
        images.save_image(torch.from_numpy(side).unsqueeze(0).expand(3, -1, -1),
                          out / f"{stem}.featmap.png")
    print(f"wrote feature response maps to {out}")
    return 0


_DISPATCH = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "reconstruct": cmd_reconstruct,
    "featmap": cmd_featmap,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _DISPATCH[args.verb](args)
    except SystemExit as exc:                      # --help and friends
        return int(exc.code or 0)
    except (UsageError, ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericFaultError as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Command-line entry point.

Exit status: 0 on success, 1 on usage, contract or validation errors, 2 on
I/O errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..data.build import DEFAULT_COUNTS, build_dataset, load_split
from ..data.io import Manifest
from ..degrade import golden
from ..errors import RecordIOError, RobustSegError
from ..model.teacher import TeacherConfig, load_teacher, pretrain_teacher, save_teacher
from .ablation import ablation_csv, ablation_run
from .config import TrainConfig, load_config
from .evaluate import evaluate, robust_predictor, teacher_predictor
from .invariance import invariance_report, robust_features, teacher_features
from .train import load_run, save_run, train_robust


GLOBAL_FLAGS = ("seed", "config", "out")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> Parser:
    common = Parser(add_help=False)
    # SUPPRESS so a flag given before the subcommand is not reset by the
    # subparser's own default
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")

    p = Parser(prog="robustseg", description="Degradation-robust promptable segmentation toolkit",
               parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen-data", parents=[common], help="generate the toy dataset")
    for split, n in DEFAULT_COUNTS.items():
        g.add_argument(f"--{split}", type=int, default=n)

    t = sub.add_parser("pretrain-teacher", parents=[common], help="train the clear-image teacher")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--allow-below-floor", action="store_true")

    r = sub.add_parser("train", parents=[common], help="robust training")
    r.add_argument("--data", default=None)
    r.add_argument("--teacher", default=None)
    r.add_argument("--epochs", type=int, default=None)
    r.add_argument("--variant", default=None)
    r.add_argument("--resume", default=None, help="epoch checkpoint to continue from")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True, help="robust run checkpoint, or 'teacher'")
    e.add_argument("--teacher", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--prompt", choices=("point", "box"), default="point")
    e.add_argument("--points", type=int, default=1)

    a = sub.add_parser("ablate", parents=[common], help="run the five-variant ladder")
    a.add_argument("--data", default=None)
    a.add_argument("--teacher", default=None)
    a.add_argument("--epochs", type=int, default=None)

    v = sub.add_parser("invariance", parents=[common], help="silhouette invariance report")
    v.add_argument("--teacher", required=True)
    v.add_argument("--robust", required=True)
    v.add_argument("--no-consistency", required=True, dest="nocons")
    v.add_argument("--data", required=True)
    v.add_argument("--images", type=int, default=20)

    h = sub.add_parser("golden-hash", parents=[common], help="check the degradation golden table")
    h.add_argument("--write", action="store_true", help="regenerate the table instead of checking")
    return p


def out_dir(args, default: str) -> Path:
    d = Path(args.out or default)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RecordIOError(str(d), f"cannot create output directory: {exc}") from exc
    return d


def train_config(args) -> TrainConfig:
    cfg = load_config(args.config, TrainConfig)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    for key in ("data", "teacher", "epochs"):
        if getattr(args, key, None) is not None:
            changes[key] = getattr(args, key)
    cfg = cfg.replace(**changes)
    if getattr(args, "variant", None):
        cfg = cfg.with_variant(args.variant)
    return cfg


def write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise RecordIOError(str(path), f"cannot write: {exc}") from exc


def cmd_gen_data(args) -> int:
    root = out_dir(args, "data")
    counts = {"train": args.train, "val": args.val, "test": args.test}
    m = build_dataset(args.seed or 0, counts, root)
    print(f"wrote {len(m.entries)} manifest entries to {root}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, TeacherConfig)
    if args.seed is not None:
        cfg = TeacherConfig(**{**cfg.__dict__, "seed": args.seed})
    if args.epochs is not None:
        cfg = TeacherConfig(**{**cfg.__dict__, "epochs": args.epochs})
    root = out_dir(args, "teacher")
    lines = []

    def log(line):
        lines.append(line)
        print(line, flush=True)

    model, info = pretrain_teacher(Manifest.read(args.data, check_files=False), cfg, log_fn=log,
                                   enforce_floor=not args.allow_below_floor)
    save_teacher(model, info, root / "teacher.rstn")
    write_text(root / "teacher.log", "\n".join(lines) + "\n")
    print(f"teacher val mIoU {info['val_miou']:.4f}")
    return 0


def cmd_train(args) -> int:
    root = out_dir(args, "run")
    resume = None
    if args.resume:
        cfg_teacher = train_config(args).teacher
        teacher, _ = load_teacher(cfg_teacher)
        resume, cfg = load_run(args.resume, teacher)
        if args.epochs is not None:
            cfg = cfg.replace(epochs=args.epochs)
    else:
        cfg = train_config(args)
        teacher, _ = load_teacher(cfg.teacher)
    lines = []

    def log(line):
        lines.append(line)
        print(line, flush=True)

    state = train_robust(teacher, cfg, resume=resume, checkpoint_dir=root, log_fn=log)
    save_run(state, cfg, root / "final.rstn")
    with open(root / "train.log", "a", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def cmd_eval(args) -> int:
    root = out_dir(args, "eval")
    teacher, tinfo = load_teacher(args.teacher)
    manifest = Manifest.read(args.data)
    if args.checkpoint == "teacher":
        predict, meta = teacher_predictor(teacher), {"model": "teacher"}
    else:
        state, cfg = load_run(args.checkpoint, teacher)
        predict, meta = robust_predictor(teacher, state.robust), {"model": cfg.variant.name, "seed": cfg.seed}
    meta["checkpoint"] = str(args.checkpoint)
    report = evaluate(predict, manifest, args.split, args.prompt, args.points, meta)
    write_text(root / "report.csv", report.to_csv())
    write_text(root / "report.json", report.to_json())
    print(report.to_csv(), end="")
    return 0


def cmd_ablate(args) -> int:
    root = out_dir(args, "ablation")
    cfg = train_config(args)
    teacher, _ = load_teacher(cfg.teacher)
    rows = ablation_run(teacher, cfg, Manifest.read(cfg.data), log_fn=print)
    write_text(root / "ablation.csv", ablation_csv(rows))
    print(ablation_csv(rows), end="")
    return 0


def cmd_invariance(args) -> int:
    root = out_dir(args, "invariance")
    teacher, _ = load_teacher(args.teacher)
    robust, _ = load_run(args.robust, teacher)
    nocons, _ = load_run(args.nocons, teacher)
    records = load_split(Manifest.read(args.data), "test", clear_only=True)[:args.images]
    report = invariance_report({"teacher": teacher_features(teacher),
                                "robust": robust_features(teacher, robust.robust),
                                "no_consistency": robust_features(teacher, nocons.robust)},
                               records, seed=args.seed or 0)
    write_text(root / "invariance.json", json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(report.silhouettes, sort_keys=True))
    return 0


def cmd_golden(args) -> int:
    if args.write:
        golden.write_table()
        print(f"wrote {golden.TABLE_PATH}")
        return 0
    result = golden.check_table()
    for kind, ok in result.items():
        print(f"{kind:20s} {'ok' if ok else 'MISMATCH'}")
    return 0 if all(result.values()) else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-teacher": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "invariance": cmd_invariance,
    "golden-hash": cmd_golden,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for key in GLOBAL_FLAGS:
            if not hasattr(args, key):
                setattr(args, key, None)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (RecordIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RobustSegError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()

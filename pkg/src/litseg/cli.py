"""``litseg`` command line entry point.

Data directories hold one sub-directory per case::

    DATA/case_000/image.vol   raw HU volume
    DATA/case_000/liver.vol   liver mask
    DATA/case_000/lesion.vol  lesion mask

Precedence for settings: command-line flag > config file > built-in default.
"""
import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import InvalidConfig, LitsegError
from .metrics import evaluate_case, summarize
from .networks import TiramisuConfig, UNetConfig, build_tiramisu, build_unet
from .phantom import generate_dataset
from .pipeline import CascadeSettings, load_cascade, predict_volume, render_overlay
from .preprocess import AXES, DatasetStats, get_slice
from .train import load_checkpoint, resolve_checkpoint, train
from .volume_io import load_any, read_volume, write_volume

log = logging.getLogger("litseg")

IMAGE, LIVER, LESION = "image.vol", "liver.vol", "lesion.vol"


class CommandError(LitsegError):
    pass


def _fail(stage, msg):
    exc = CommandError(msg)
    exc.stage = stage
    raise exc


def case_dirs(root, need=(IMAGE,)):
    root = Path(root)
    if not root.is_dir():
        _fail("load", f"data directory {root} does not exist")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and all((p / n).exists() for n in need))
    if not dirs:
        _fail("load", f"no case directories with {', '.join(need)} under {root}")
    return dirs


def load_cases(dirs):
    return [tuple(read_volume(d / n) for n in (IMAGE, LIVER, LESION)) for d in dirs]


def _map(fn, items, jobs):
    """Ordered map; ``jobs == 1`` stays in-process."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- phantom -----------------------------------------------------------------

def cmd_phantom(args):
    out = Path(args.out)
    for i, (vol, liver, lesion) in enumerate(generate_dataset(args.n, args.size, args.seed, args.noise)):
        d = out / f"case_{i:03d}"
        d.mkdir(parents=True, exist_ok=True)
        write_volume(vol, d / IMAGE)
        write_volume(liver, d / LIVER)
        write_volume(lesion, d / LESION)
    print(f"wrote {args.n} phantoms to {out}")


# -- preprocess --------------------------------------------------------------

def cmd_preprocess(args):
    dirs = case_dirs(args.data)
    cfg = {"clip": {"lo": args.clip[0], "hi": args.clip[1]}}
    stats = config_mod.stats_for(cfg, [(read_volume(d / IMAGE),) for d in dirs])
    stats.save(args.out)
    print(f"mean {stats.mean:.6g} std {stats.std:.6g} over {len(dirs)} volumes -> {args.out}")


# -- train -------------------------------------------------------------------

def _overrides(args):
    over = {}
    if args.epochs is not None:
        over["epochs"] = args.epochs
    if args.seed is not None:
        over["seed"] = args.seed
    if args.batch_size is not None:
        over["batch_size"] = args.batch_size
    if args.lr is not None:
        over["optimizer"] = {"lr": args.lr}
    return over


def cmd_train(args, stage=None):
    over = _overrides(args)
    if stage:
        over["stage"] = stage
    cfg = config_mod.load_config(args.config, overrides=over)
    dirs = case_dirs(args.data, (IMAGE, LIVER, LESION))
    tr_idx, va_idx = config_mod.split_cases(len(dirs), cfg["val_fraction"], cfg["seed"])
    cases = load_cases(dirs)
    if args.stats:
        stats = DatasetStats.load(args.stats)
    else:
        stats = config_mod.stats_for(cfg, [cases[i] for i in tr_idx])
    target = 1 if cfg["stage"] == "liver" else 2
    pick = lambda ids: [(cases[i][0], cases[i][1], cases[i][target]) for i in ids]  # noqa: E731
    train_set = config_mod.stage_samples(cfg, pick(tr_idx), stats, tr_idx, cfg["seed"])
    val_set = config_mod.stage_samples(cfg, pick(va_idx), stats, va_idx, cfg["seed"] + 10_000)
    tcfg = config_mod.train_config(cfg, args.out)
    fill = float((cfg["clip"]["lo"] - stats.mean) / stats.std)
    trainlog, _, checkpoints = train(tcfg, train_set, val_set, args.out, fill=fill,
                                     meta=config_mod.stage_meta(cfg, stats))
    best = max(trainlog.records, key=lambda r: (r.val_score, -r.epoch))
    print(f"best epoch {best.epoch} val {best.val_score:.4f} -> {checkpoints[best.epoch]}")


# -- predict -----------------------------------------------------------------

def _settings(args, liver_extra, lesion_extra, cfg):
    post = dict(config_mod.DEFAULTS["postprocess"])
    if cfg is not None:
        post.update(cfg.get("postprocess", {}))
    for key in ("threshold", "dilate", "close", "connectivity"):
        if getattr(args, key) is not None:
            post[key] = getattr(args, key)
    size = liver_extra.get("slice_size")
    return CascadeSettings(
        liver_axis=liver_extra.get("axis", "axial"),
        liver_size=tuple(size) if size else None,
        lesion_axis=lesion_extra.get("axis", "coronal"),
        crop=tuple(lesion_extra.get("crop", (224, 224))),
        margin=lesion_extra.get("margin", 16),
        threshold=post["threshold"], connectivity=post["connectivity"],
        dilate=post["dilate"], close=post["close"],
    )


def _predict_one(job):
    src, dst, liver_ckpt, lesion_ckpt, settings, stats, clip = job
    liver_g, lesion_g, _, _ = load_cascade(liver_ckpt, lesion_ckpt)
    vol = load_any(src)
    start = time.perf_counter()
    liver, lesion = predict_volume(liver_g, lesion_g, vol, stats, settings, clip)
    dst.mkdir(parents=True, exist_ok=True)
    write_volume(liver, dst / LIVER)
    write_volume(lesion, dst / LESION)
    return str(src), time.perf_counter() - start


def cmd_predict(args):
    cfg = config_mod.load_config(args.config) if args.config else None
    _, _, stats, liver_extra = load_cascade(args.liver_net, args.lesion_net)
    lesion_extra = load_checkpoint(resolve_checkpoint(args.lesion_net))[2].get("extra", {})
    if args.stats:
        stats = DatasetStats.load(args.stats)
    if stats is None:
        _fail("load", "liver checkpoint carries no dataset statistics; pass --stats")
    settings = _settings(args, liver_extra, lesion_extra, cfg)
    clip = tuple(liver_extra.get("clip", (-100.0, 400.0)))
    src, out = Path(args.input), Path(args.out)
    if src.is_dir():
        pairs = [(d / IMAGE, out / d.name) for d in case_dirs(src)]
    else:
        pairs = [(src, out)]
    jobs = [(s, d, args.liver_net, args.lesion_net, settings, stats, clip) for s, d in pairs]
    for name, seconds in _map(_predict_one, jobs, args.jobs):
        log.info("%s: %.2fs", name, seconds)
        print(f"{name}: {seconds:.2f}s")


# -- evaluate ----------------------------------------------------------------

def _evaluate_one(job):
    pred_dir, gt_dir, fname = job
    pred = read_volume(pred_dir / fname)
    gt = read_volume(gt_dir / fname)
    liver_gt = read_volume(gt_dir / LIVER) if fname == LESION and (gt_dir / LIVER).exists() else None
    return evaluate_case(pred, gt, liver_gt, gt.spacing, case_id=gt_dir.name)


def cmd_evaluate(args):
    fname = LESION if args.target == "lesion" else LIVER
    gt_dirs = case_dirs(args.gt, (fname,))
    pred_root = Path(args.pred)
    for d in gt_dirs:
        if not (pred_root / d.name / fname).exists():
            _fail("evaluate", f"missing prediction {pred_root / d.name / fname}")
    jobs = [(pred_root / d.name, d, fname) for d in gt_dirs]
    report = summarize(_map(_evaluate_one, jobs, args.jobs))
    report.to_csv(args.out)
    print(json.dumps(report.summary(), indent=2, default=float))


# -- describe / overlay ------------------------------------------------------

def cmd_describe(args):
    g = build_unet(UNetConfig()) if args.net == "unet" else build_tiramisu(TiramisuConfig())
    print(g.describe())


def cmd_render_overlay(args):
    image = read_volume(args.image).data
    gt = read_volume(args.gt).data
    pred = read_volume(args.pred).data
    ax = AXES[args.axis]
    idx = args.slice if args.slice is not None else int(np.argmax(np.moveaxis(gt, ax, 0).reshape(gt.shape[ax], -1).sum(1)))
    ppm = render_overlay(get_slice(gt, ax, idx), get_slice(pred, ax, idx), get_slice(image, ax, idx))
    Path(args.out).write_bytes(ppm)
    print(f"slice {idx} -> {args.out}")


def build_parser():
    p = argparse.ArgumentParser(prog="litseg", description="Liver and lesion segmentation cascade.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="generate synthetic CT cases")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=10.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom, stage="phantom")

    s = sub.add_parser("preprocess", help="compute dataset intensity statistics")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--clip", type=float, nargs=2, default=(-100.0, 400.0))
    s.set_defaults(func=cmd_preprocess, stage="preprocess")

    for name, stage in (("train", None), ("train-liver", "liver"), ("train-lesion", "lesion")):
        s = sub.add_parser(name, help=f"train a {stage or 'configured'} network")
        s.add_argument("--config", required=True)
        s.add_argument("--data", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--stats")
        s.add_argument("--epochs", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--lr", type=float)
        s.set_defaults(func=lambda a, st=stage: cmd_train(a, st), stage="train")

    s = sub.add_parser("predict", help="run the cascade on a volume or a data directory")
    s.add_argument("--liver-net", required=True)
    s.add_argument("--lesion-net", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--stats")
    s.add_argument("--threshold", type=float)
    s.add_argument("--dilate", type=int)
    s.add_argument("--close", type=int)
    s.add_argument("--connectivity", type=int, choices=(6, 26))
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_predict, stage="predict")

    s = sub.add_parser("evaluate", help="score predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--target", choices=("liver", "lesion"), default="lesion")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_evaluate, stage="evaluate")

    s = sub.add_parser("describe", help="print a network's layer and parameter table")
    s.add_argument("--net", choices=("unet", "tiramisu"), required=True)
    s.set_defaults(func=cmd_describe, stage="describe")

    s = sub.add_parser("render-overlay", help="write a TP/FP/FN overlay of one slice as PPM")
    s.add_argument("--image", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--axis", choices=tuple(AXES), default="axial")
    s.add_argument("--slice", type=int)
    s.set_defaults(func=cmd_render_overlay, stage="render-overlay")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except LitsegError as exc:
        stage = getattr(exc, "stage", None) or args.stage
        print(f"litseg {args.command}: error in stage '{stage}': {exc}", file=sys.stderr)
        return 2
    except (OSError, InvalidConfig) as exc:
        print(f"litseg {args.command}: error in stage '{args.stage}': {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

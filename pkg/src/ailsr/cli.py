"""Command line interface: ``ailsr prepare | train | eval | compare``.

Exit codes: 0 success, 2 config/usage error, 3 missing dependency artifact
(teacher checkpoint), 4 data error.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, load_config
from .data import AugmentSpec, DataError, build_manifest, load_dataset, load_eval_images
from .evaluation import evaluate, write_csv, write_summary
from .importance import ImportanceStore, ImportanceStoreError
from .model import CheckpointError, load_checkpoint, parameter_digest, save_checkpoint
from .training import run_ail, run_distill, run_traditional

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("ailsr")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def default_threads():
    return int(os.environ.get("AILSR_THREADS", "1"))


# --------------------------------------------------------------------------
# prepare
# --------------------------------------------------------------------------

def cmd_prepare(args):
    if not Path(args.images).is_dir():
        raise CliError(f"image directory not found: {args.images}", EXIT_USAGE)
    spec = AugmentSpec(
        rotations=tuple(args.rotations),
        flip=args.flip,
        scales=tuple(args.scales),
    )
    try:
        manifest = build_manifest(args.images, args.out, args.scale, spec, args.patch, args.stride, args.seed)
    except DataError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    print(f"images:   {len(manifest.sources)}")
    print(f"patches:  {len(manifest.ids)}")
    print(f"checksum: {manifest.checksum}")
    return EXIT_OK


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def _prepare_run_dir(path, force):
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise CliError(f"run directory {out} is not empty (use --force)", EXIT_USAGE)
    for sub in ("checkpoints", "reports"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    return out


def _load_teacher(path):
    if not path:
        raise CliError("this scheme needs 'teacher_checkpoint' in the config", EXIT_MISSING)
    if not Path(path).is_file():
        raise CliError(f"teacher checkpoint not found: {path}", EXIT_MISSING)
    try:
        return load_checkpoint(path).network
    except CheckpointError as exc:
        raise CliError(f"teacher checkpoint unusable: {exc}", EXIT_MISSING) from exc


def cmd_train(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    if args.threads is not None:
        cfg.threads = args.threads
    out_path = args.out or cfg.output
    if not out_path:
        raise CliError("no output directory: set 'output' in the config or pass --out", EXIT_USAGE)
    cfg.output = str(out_path)

    teacher = None
    if cfg.scheme == "distill" or (cfg.scheme == "ail" and cfg.ail.init == "teacher"):
        teacher = _load_teacher(cfg.teacher_checkpoint)
    try:
        data = load_dataset(cfg.data.manifest)
        val = load_eval_images(cfg.data.val_images) if cfg.data.val_images else None
    except DataError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc

    out = _prepare_run_dir(out_path, args.force)
    chash = cfg.content_hash()
    (out / "config.json").write_text(
        json.dumps({"config_hash": chash, **cfg.to_dict()}, indent=1, sort_keys=True)
    )
    with threadpool_limits(limits=cfg.threads):
        if cfg.scheme == "traditional":
            net, trainlog = run_traditional(cfg.model, data, cfg.train, val)
        elif cfg.scheme == "ail":
            store = ImportanceStore(out / "importance")
            try:
                net, trainlog, _ = run_ail(
                    cfg.model, data, cfg.train, cfg.ail, teacher, cfg.teacher_init, val, store
                )
            except ImportanceStoreError as exc:
                raise CliError(str(exc), EXIT_DATA) from exc
        else:
            net, trainlog = run_distill(cfg.model, data, cfg.train, cfg.distill, teacher, val)

    trainlog.write_jsonl(out / "log.jsonl")
    trainlog.write_timings(out / "timings.jsonl")
    meta = {
        "scheme": cfg.scheme,
        "seed": cfg.train.seed,
        "config_hash": chash,
        "epochs": len(trainlog.epochs),
        "scale": data.scale,
    }
    save_checkpoint(net, out / "checkpoints" / "final.ckpt", metadata=meta)
    print(f"checkpoint: {out / 'checkpoints' / 'final.ckpt'}")
    print(f"parameters sha256: {parameter_digest(net)}")
    if val:
        res = evaluate(net, val, data.scale, dataset=Path(cfg.data.val_images).name)
        write_csv(res, out / "reports" / "eval.csv")
        write_summary(res, out / "reports" / "summary.json", chash, rounds=trainlog.rounds,
                      extra={"scheme": cfg.scheme})
        print(f"validation: PSNR {res.mean_psnr:.4f} dB  SSIM {res.mean_ssim:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def cmd_eval(args):
    if not Path(args.checkpoint).is_file():
        raise CliError(f"checkpoint not found: {args.checkpoint}", EXIT_MISSING)
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    trained_scale = ckpt.metadata.get("scale")
    if trained_scale is not None and trained_scale != args.scale:
        print(f"warning: checkpoint was trained at x{trained_scale}, evaluating at x{args.scale}",
              file=sys.stderr)
    if not Path(args.images).is_dir():
        raise CliError(f"image directory not found: {args.images}", EXIT_USAGE)
    try:
        images = load_eval_images(args.images)
    except DataError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    with threadpool_limits(limits=args.threads or default_threads()):
        res = evaluate(ckpt.network, images, args.scale, dataset=args.name or Path(args.images).name)
    if args.report:
        rep = Path(args.report)
        rep.mkdir(parents=True, exist_ok=True)
        write_csv(res, rep / "eval.csv")
        write_summary(res, rep / "summary.json", ckpt.metadata.get("config_hash"),
                      extra={"scheme": ckpt.metadata.get("scheme"), "checkpoint": str(args.checkpoint)})
    print(f"{res.dataset} x{res.scale}: PSNR {res.mean_psnr:.4f} dB  SSIM {res.mean_ssim:.4f}  ({len(res.images)} images)")
    return EXIT_OK


# --------------------------------------------------------------------------
# compare
# --------------------------------------------------------------------------

def _find_summary(path):
    p = Path(path)
    for cand in (p, p / "summary.json", p / "reports" / "summary.json"):
        if cand.is_file():
            return cand
    raise CliError(f"no summary.json under {path}", EXIT_MISSING)


def _arrow(delta, digits):
    sign = "↑" if delta >= 0 else "↓"
    return f"{sign}{abs(delta):.{digits}f}"


def compare_reports(paths):
    reports = []
    for p in paths:
        with open(_find_summary(p)) as fh:
            reports.append((str(p), json.load(fh)))
    base_name, base = reports[0]
    base_ids = sorted(r["id"] for r in base["images"])
    for name, rep in reports[1:]:
        ids = sorted(r["id"] for r in rep["images"])
        if rep["scale"] != base["scale"] or rep["dataset"] != base["dataset"] or ids != base_ids:
            raise CliError(f"{name} was evaluated on a different set/scale than {base_name}", EXIT_DATA)
        if rep.get("convention") != base.get("convention"):
            raise CliError(f"{name} uses a different metric convention than {base_name}", EXIT_DATA)
    rows = []
    for name, rep in reports:
        rows.append({
            "run": name,
            "scheme": rep.get("scheme"),
            "config_hash": rep.get("config_hash"),
            "dataset": rep["dataset"],
            "scale": rep["scale"],
            "psnr": rep["mean_psnr"],
            "ssim": rep["mean_ssim"],
            "d_psnr": rep["mean_psnr"] - base["mean_psnr"],
            "d_ssim": rep["mean_ssim"] - base["mean_ssim"],
        })
    return rows


def cmd_compare(args):
    if len(args.runs) < 2:
        raise CliError("compare needs at least two runs", EXIT_USAGE)
    rows = compare_reports(args.runs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["run", "scheme", "config_hash", "dataset", "scale", "psnr", "ssim", "delta_psnr", "delta_ssim"])
        for r in rows:
            wr.writerow([r["run"], r["scheme"], r["config_hash"], r["dataset"], r["scale"],
                         f"{r['psnr']:.4f}", f"{r['ssim']:.4f}", f"{r['d_psnr']:.4f}", f"{r['d_ssim']:.4f}"])
    width = max(len(r["run"]) for r in rows)
    lines = [f"{'run':<{width}}  {'dataset':<10} {'scale':>5}  {'PSNR/SSIM':>16}  {'vs first':>16}"]
    for r in rows:
        delta = f"{_arrow(r['d_psnr'], 2)}/{_arrow(r['d_ssim'], 4)}"
        lines.append(
            f"{r['run']:<{width}}  {r['dataset']:<10} {'x' + str(r['scale']):>5}  "
            f"{r['psnr']:>7.2f}/{r['ssim']:.4f}  {delta:>16}"
        )
    text = "\n".join(lines)
    out.with_suffix(".txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


# --------------------------------------------------------------------------

class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for options whose default is simply unset."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def build_parser():
    p = argparse.ArgumentParser(
        prog="ailsr",
        description="Adaptive importance learning for lightweight super-resolution networks.",
        formatter_class=_HelpFormatter,
    )
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)
    fmt = _HelpFormatter

    pp = sub.add_parser("prepare", help="build a patch archive from an image folder", formatter_class=fmt)
    pp.add_argument("--images", required=True, help="directory of PNG/PPM images")
    pp.add_argument("--scale", type=int, choices=(2, 3, 4), required=True, help="upscaling factor")
    pp.add_argument("--out", required=True, help="output directory for manifest.json + patches.bin")
    pp.add_argument("--rotations", type=int, nargs="*", default=[90, 180, 270], choices=(90, 180, 270),
                    help="rotation augmentations (degrees)")
    pp.add_argument("--flip", action=argparse.BooleanOptionalAction, default=True, help="horizontal flip augmentation")
    pp.add_argument("--scales", type=float, nargs="+", default=[1.0, 0.7, 0.5], help="HR rescaling augmentations")
    pp.add_argument("--patch", type=int, default=41, help="patch size")
    pp.add_argument("--stride", type=int, default=41, help="patch stride")
    pp.add_argument("--seed", type=int, default=0, help="archive order seed")
    pp.set_defaults(func=cmd_prepare)

    pt = sub.add_parser(
        "train",
        help="train with scheme traditional | ail | distill",
        formatter_class=fmt,
        description=(
            "Train from a JSON config. Defaults: 50 epochs, batch 128, lr 0.1 decayed x10 every "
            "10 epochs, SGD momentum 0.9, weight decay 1e-4, clip 0.4, lambda 0.15, T 10, "
            "mu0 0.01, alpha0 100, beta 0.1."
        ),
    )
    pt.add_argument("--config", required=True, help="run config JSON")
    pt.add_argument("--out", default=None, help="run directory (overrides config 'output')")
    pt.add_argument("--force", action="store_true", help="allow writing into a non-empty run directory")
    pt.add_argument("--threads", type=int, default=None,
                    help="BLAS threads (default: the config's 'threads' key, 1 if absent)")
    pt.set_defaults(func=cmd_train)

    pe = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on an image folder", formatter_class=fmt)
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--images", required=True)
    pe.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    pe.add_argument("--report", default=None, help="directory for eval.csv + summary.json")
    pe.add_argument("--name", default=None, help="dataset name in the report (default: folder name)")
    pe.add_argument("--threads", type=int, default=None,
                    help="BLAS threads (default: $AILSR_THREADS, else 1)")
    pe.set_defaults(func=cmd_eval)

    pc = sub.add_parser("compare", help="delta table of several evaluation reports", formatter_class=fmt)
    pc.add_argument("--runs", nargs="+", required=True, help="run or report directories; first is the baseline")
    pc.add_argument("--out", required=True, help="CSV output path (an aligned .txt is written alongside)")
    pc.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

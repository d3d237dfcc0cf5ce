"""The ``gfpc`` command line front end.

Subcommands mirror the pipeline stages: synth -> gradfield / pretrain ->
finetune -> predict / eval / sweep. Exit codes: 0 success, 1 usage error,
2 runtime error (one-line message on stderr). stdout carries only data and
reports; progress and the resolved configuration go to stderr.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckptio
from . import config as configmod
from . import data as datamod
from . import kernels
from .contrast import pretrain
from .depth import DepthNet, evaluate_model, finetune, predict_depth
from .errors import GfpcError, InputError, UsageError
from .gradfield import field_to_u8, gradient_field
from .metrics import CSV_COLUMNS, MetricReport, aggregate
from .util import parallel_map, thread_count


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _diag(msg):
    print(msg, file=sys.stderr)


def _log_config(cfg):
    for line in cfg.lines():
        _diag(f"config: {line}")


def _add_common(p):
    p.add_argument("--config", metavar="FILE",
                   help="flat key-value config file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   dest="overrides", help="override one config key")


def _add_threads(p):
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $GFPC_THREADS or 1)")


def build_parser():
    parser = _Parser(prog="gfpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset root to create")
    p.add_argument("--n", required=True, type=int, help="number of scenes")
    p.add_argument("--seed", required=True, type=int)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradfield", help="write gradient fields for a folder "
                                         "of PNGs")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", dest="outdir", required=True)
    p.add_argument("--raw", action="store_true",
                   help="also write 32-bit float .f32 dumps")
    _add_common(p)
    _add_threads(p)
    p.set_defaults(func=cmd_gradfield)

    p = sub.add_parser("pretrain", help="contrastive pretraining")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    _add_common(p)
    _add_threads(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised depth fine-tuning")
    p.add_argument("--data", required=True)
    p.add_argument("--init", required=True,
                   help="'random' or a pretraining checkpoint path")
    p.add_argument("--fraction", type=float, default=1.0,
                   help="labeled fraction in (0,1]")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--epochs", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("predict", help="predict one depth map")
    p.add_argument("--in", dest="infile", required=True, help="RGB PNG")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="16-bit millimeter PNG")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled set")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--protocol", metavar="FILE", default=None,
                   help="key-value file with eval.* settings")
    p.add_argument("--out", default=None,
                   help="CSV path (default: CSV follows the report on stdout)")
    _add_common(p)
    _add_threads(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="label-fraction sweep: finetune + eval "
                                     "grid")
    p.add_argument("--data", required=True, help="labeled training root")
    p.add_argument("--test", required=True, help="labeled evaluation root")
    p.add_argument("--ckpt", default=None,
                   help="pretraining checkpoint for init=ckpt")
    p.add_argument("--fractions", default="0.05,0.25,1.0")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--inits", default="random,ckpt",
                   help="comma list drawn from {random, ckpt}")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    _add_common(p)
    _add_threads(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage(), end="", file=sys.stderr)
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        print(parser.format_usage(), end="", file=sys.stderr)
        print("usage error: a command is required", file=sys.stderr)
        return 1
    try:
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except GfpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


# -- commands ------------------------------------------------------------

def _load(args):
    cfg = configmod.load_config(args.config, args.overrides)
    return cfg


def cmd_synth(args):
    cfg = _load(args)
    _log_config(cfg)
    params = cfg.synth(seed=args.seed)
    out = datamod.generate_synthetic(params, args.out, args.n)
    print(f"{out}/manifest.csv,{args.n}")
    return 0


def cmd_gradfield(args):
    cfg = _load(args)
    _log_config(cfg)
    canny = cfg.canny()
    threads = thread_count(args.threads)
    indir = Path(args.indir)
    if not indir.is_dir():
        raise InputError(f"not a directory: {indir}")
    paths = sorted(indir.glob("*.png"))
    if not paths:
        raise InputError(f"no .png files under {indir}")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    def one(path):
        field = gradient_field(datamod.load_rgb(path), canny)
        datamod.write_gray_png(outdir / path.name, field_to_u8(field))
        if args.raw:
            datamod.write_raw_field(outdir / (path.stem + ".f32"), field)
        return path.name

    for name in parallel_map(one, paths, threads):
        print(name)
    return 0


def cmd_pretrain(args):
    cfg = _load(args)
    _log_config(cfg)
    threads = thread_count(args.threads)
    contrast_cfg = cfg.contrast()
    enc_cfg = cfg.encoder()
    canny = cfg.canny()
    manifest = datamod.load_manifest(args.data, labeled=False)
    images = datamod.load_images(manifest, threads)
    _diag(f"pretrain: {len(images)} images, backend {kernels.BACKEND}")

    def progress(step, total, loss):
        if step % 50 == 0 or step == total:
            _diag(f"pretrain: step {step}/{total} loss {loss:.4f}")

    loss_path = Path(str(args.out) + ".loss.csv")
    with open(loss_path, "w") as log:
        pair, _ = pretrain(images, contrast_cfg, enc_cfg, canny,
                           log_stream=log, threads=threads,
                           progress=progress)
    ckptio.save_checkpoint(args.out, pair.query.params, enc_cfg.digest())
    print(f"{args.out},{loss_path}")
    return 0


def cmd_finetune(args):
    cfg = _load(args)
    _log_config(cfg)
    enc_cfg = cfg.encoder()
    overrides = {"fraction": args.fraction, "init": args.init}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    fcfg = cfg.finetune(**overrides)
    manifest = datamod.load_manifest(args.data, labeled=True)
    samples = datamod.load_samples(manifest)

    def progress(epoch, total, loss):
        _diag(f"finetune: epoch {epoch}/{total} loss {loss:.4f}")

    loss_path = Path(str(args.out) + ".loss.csv")
    with open(loss_path, "w") as log:
        net, _ = finetune(samples, fcfg, enc_cfg, log_stream=log,
                          progress=progress)
    ckptio.save_checkpoint(args.out, net.params, enc_cfg.digest())
    print(f"{args.out},{loss_path}")
    return 0


def _load_depth_net(cfg, path):
    enc_cfg = cfg.encoder()
    params, _ = ckptio.load_checkpoint(path, expect_digest=enc_cfg.digest())
    return DepthNet(enc_cfg, params)


def cmd_predict(args):
    cfg = _load(args)
    _log_config(cfg)
    net = _load_depth_net(cfg, args.ckpt)
    rgb = datamod.load_rgb(args.infile)
    depth = predict_depth(net, rgb)
    datamod.write_depth_png(args.out, depth)
    print(args.out)
    return 0


def _write_csv(stream, rows, header):
    writer = csv.writer(stream)
    writer.writerow(header)
    writer.writerows(rows)


def _metric_cells(report):
    return [f"{getattr(report, c):.6f}" for c in CSV_COLUMNS]


def cmd_eval(args):
    cfg = _load(args)
    if args.protocol:
        configmod.apply_file(cfg, args.protocol)
    _log_config(cfg)
    protocol = cfg.protocol()
    net = _load_depth_net(cfg, args.ckpt)
    manifest = datamod.load_manifest(args.data, split="test", labeled=True)
    samples = datamod.load_samples(manifest)
    threads = thread_count(args.threads)
    pooled, reports = evaluate_model(net, samples, protocol, threads)
    if cfg["eval.per_image"]:
        pooled = aggregate(reports, per_image=True)
    for line in pooled.lines():
        print(line)
    rows = [_metric_cells(pooled)]
    if args.out:
        with open(args.out, "w", newline="") as f:
            _write_csv(f, rows, CSV_COLUMNS)
    else:
        print()
        _write_csv(sys.stdout, rows, CSV_COLUMNS)
    return 0


def cmd_sweep(args):
    cfg = _load(args)
    _log_config(cfg)
    enc_cfg = cfg.encoder()
    protocol = cfg.protocol()
    threads = thread_count(args.threads)
    fractions = [float(x) for x in args.fractions.split(",") if x.strip()]
    seeds = [int(x) for x in args.seeds.split(",") if x.strip()]
    inits = [x.strip() for x in args.inits.split(",") if x.strip()]
    if not fractions or not seeds or not inits:
        raise UsageError("need at least one fraction, seed, and init mode")
    for mode in inits:
        if mode not in ("random", "ckpt"):
            raise UsageError(f"init mode must be random or ckpt, got {mode!r}")
        if mode == "ckpt" and not args.ckpt:
            raise UsageError("init mode 'ckpt' requires --ckpt")

    train = datamod.load_samples(datamod.load_manifest(args.data,
                                                       labeled=True))
    test = datamod.load_samples(datamod.load_manifest(args.test, split="test",
                                                      labeled=True))
    header = ("init", "fraction", "seed") + CSV_COLUMNS
    rows = []
    for mode in inits:
        init_arg = "random" if mode == "random" else args.ckpt
        for fraction in fractions:
            group = []
            for seed in seeds:
                fcfg = cfg.finetune(fraction=fraction, seed=seed,
                                    init=init_arg)
                net, _ = finetune(train, fcfg, enc_cfg)
                report, _ = evaluate_model(net, test, protocol, threads)
                _diag(f"sweep: {mode} fraction={fraction} seed={seed} "
                      f"delta1={report.delta1:.4f} rel={report.rel:.4f}")
                rows.append([mode, f"{fraction}", f"{seed}"]
                            + _metric_cells(report))
                group.append(report)
            mean = _mean_report(group)
            rows.append([mode, f"{fraction}", "mean"] + _metric_cells(mean))
    if args.out:
        with open(args.out, "w", newline="") as f:
            _write_csv(f, rows, header)
    else:
        _write_csv(sys.stdout, rows, header)
    return 0


def _mean_report(reports):
    k = len(reports)
    vals = {c: sum(getattr(r, c) for r in reports) / k for c in CSV_COLUMNS}
    return MetricReport(count=sum(r.count for r in reports), **vals)


if __name__ == "__main__":
    main()

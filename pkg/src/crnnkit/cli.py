"""Command-line entry point: ``crnnkit <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 partial failure (some
images could not be read). Every run writes ``run-manifest.json`` next to
its outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__, configio, ctc, datastats, evalmetrics, imaging, network, synth, trainer
from .augment import AugmentConfig, apply_pipeline
from .charset import Charset, build_charset, read_annotations
from .dataset import load_examples

log = logging.getLogger("crnnkit")

DEFAULT_SEED = 42
RUN_KIND = "run"
EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- run configuration ------------------------------------------------------------------


def default_run_config() -> dict:
    """Flat ``section.key`` dict of every tunable with its default."""
    out = {}
    for section, obj in (
        ("train", trainer.TrainConfig()),
        ("augment", AugmentConfig()),
        ("net", network.NetConfig(vocab=2)),
    ):
        for k, v in configio.to_dict(obj).items():
            if (section, k) in (("net", "vocab"), ("augment", "order")):
                continue
            out[f"{section}.{k}"] = v
    return out


def load_run_config(path=None) -> dict:
    cfg = default_run_config()
    if path:
        with open(path, "r", encoding="utf-8") as f:
            user = configio.loads(f.read(), RUN_KIND)
        unknown = sorted(set(user) - set(cfg))
        if unknown:
            raise configio.ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(user)
    return cfg


def _section(cfg: dict, name: str) -> dict:
    p = name + "."
    return {k[len(p):]: v for k, v in cfg.items() if k.startswith(p)}


def build_configs(cfg: dict, vocab: int, seed: int):
    tcfg = configio.from_dict(trainer.TrainConfig, {**_section(cfg, "train"), "seed": seed})
    acfg = configio.from_dict(AugmentConfig, {**_section(cfg, "augment"), "seed": seed})
    net_d = {**_section(cfg, "net"), "seed": seed, "vocab": vocab}
    net_d["stages"] = tuple(tuple(s) for s in net_d["stages"])
    ncfg = network.NetConfig(**net_d)
    return tcfg, acfg, ncfg


def write_manifest(out_dir, argv, command, config=None, seed=DEFAULT_SEED, extra=None):
    os.makedirs(out_dir or ".", exist_ok=True)
    import scipy

    manifest = {
        "argv": list(argv),
        "command": command,
        "config": config or {},
        "seed": seed,
        "versions": {
            "crnnkit": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "scipy": scipy.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir or ".", "run-manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _need_file(path, what):
    if not path:
        raise UsageError(f"missing {what}")
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")


def _scales(text):
    out = []
    for part in text.split(","):
        h, _, w = part.strip().lower().partition("x")
        out.append((int(h), int(w)))
    return tuple(out)


# -- subcommands -----------------------------------------------------------------------------


def cmd_stats(args, argv):
    _need_file(args.data, "annotation file (--data)")
    samples = read_annotations(args.data)
    if args.val_data:
        _need_file(args.val_data, "validation annotation file")
        splits = {"train": samples, "val": read_annotations(args.val_data)}
    elif args.split_ratio:
        tr, va = datastats.split_train_val(samples, args.split_ratio, args.seed)
        splits = {"train": tr, "val": va}
    else:
        splits = {"train": samples}
    report = datastats.corpus_report(splits, workers=args.workers, seed=args.seed)
    written = datastats.write_report(report, args.out)
    if args.audit:
        datastats.export_label_audit_sample(splits["train"], args.audit, args.seed, os.path.join(args.out, "audit"))
    write_manifest(args.out, argv, "stats", {"split_ratio": args.split_ratio, "workers": args.workers}, args.seed)
    for k, v in report.distinct_chars.items():
        print(f"distinct chars [{k}]: {v}")
    print(f"samples: {report.n_samples}  max length: {report.max_length}")
    for k, v in report.height_fractions.items():
        print(f"height {k}: {v:.3f}")
    log.info("wrote %s", ", ".join(written))
    if report.unreadable:
        print(f"unreadable images: {len(report.unreadable)}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_charset(args, argv):
    _need_file(args.data, "annotation file (--data)")
    cs = build_charset(read_annotations(args.data))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    cs.save(args.out)
    write_manifest(out_dir, argv, "charset", {"data": args.data}, args.seed, {"size": len(cs)})
    print(f"{len(cs)} characters -> {args.out}")
    return EXIT_OK


def cmd_augment(args, argv):
    if args.action != "preview":
        raise UsageError(f"unknown augment action {args.action!r}")
    _need_file(args.image, "input image (--image)")
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = AugmentConfig.from_text(f.read())
    else:
        cfg = AugmentConfig()
    cfg = cfg.replace(seed=args.seed)
    img = imaging.load_image(args.image)
    os.makedirs(args.out, exist_ok=True)
    names = []
    for i in range(args.n):
        out = apply_pipeline(img, cfg, index=i)
        name = f"variant_{i:03d}.{args.format}"
        if args.format == "ppm" and out.shape[2] == 1:
            name = f"variant_{i:03d}.pgm"
        imaging.save_image(os.path.join(args.out, name), out)
        names.append(name)
    h, w = cfg.target_h, cfg.target_w
    cols = 2
    rows = (len(names) + cols - 1) // cols
    svg = [f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
           f'width="{cols * (w + 8)}" height="{rows * (h + 8)}">']
    for i, name in enumerate(names):
        x, y = (i % cols) * (w + 8), (i // cols) * (h + 8)
        svg.append(f'<image x="{x}" y="{y}" width="{w}" height="{h}" xlink:href="{name}"/>')
    svg.append("</svg>")
    with open(os.path.join(args.out, "contact_sheet.svg"), "w", encoding="utf-8") as f:
        f.write("\n".join(svg) + "\n")
    with open(os.path.join(args.out, "augment-config.txt"), "w", encoding="utf-8") as f:
        f.write(cfg.to_text())
    write_manifest(args.out, argv, "augment preview", configio.to_dict(cfg), args.seed)
    print(f"wrote {len(names)} variants to {args.out}")
    return EXIT_OK


def _load_train_inputs(args):
    _need_file(args.charset, "charset file (--charset)")
    _need_file(args.data, "annotation file (--data)")
    charset = Charset.load(args.charset)
    cfg = load_run_config(args.config)
    overrides = {
        "train.epochs": args.epochs,
        "train.batch_size": args.batch_size,
        "train.initial_lr": args.lr,
        "train.stop_at_val_acc": getattr(args, "stop_at", None),
    }
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    if getattr(args, "no_augment", False):
        cfg["train.augment"] = False
    if getattr(args, "multi_scale", None):
        cfg["train.multi_scale"] = [list(s) for s in _scales(args.multi_scale)]
    if cfg["train.restart_period"] > cfg["train.epochs"]:
        cfg["train.restart_period"] = cfg["train.epochs"]
    seed = args.seed if args.seed is not None else cfg["train.seed"]
    for k in ("train.seed", "augment.seed", "net.seed"):
        cfg[k] = seed
    return charset, cfg, seed


def _examples_or_fail(samples, charset, what):
    ex = load_examples(samples, charset)
    bad = [e for e in ex if not e.readable]
    if bad:
        raise UsageError(f"{len(bad)} unreadable {what} images, first: {bad[0].path}: {bad[0].error}")
    return ex


def cmd_train(args, argv):
    charset, cfg, seed = _load_train_inputs(args)
    tcfg, acfg, ncfg = build_configs(cfg, charset.num_classes, seed)
    samples = read_annotations(args.data)
    if args.val:
        train_s, val_s = samples, read_annotations(args.val)
    elif args.val_ratio:
        train_s, val_s = datastats.split_train_val(samples, 1.0 - args.val_ratio, seed)
    else:
        train_s, val_s = samples, []
    train_set = _examples_or_fail(train_s, charset, "training")
    val_set = load_examples(val_s) if val_s else []
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "resolved-config.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write(configio.dumps(RUN_KIND, cfg))
    write_manifest(args.out, argv, "train", cfg, seed)
    net = network.build(ncfg)
    log.info("network: %d parameters (%d bytes at fp32), T=%d", net.param_count(), net.param_bytes(), net.output_steps())

    def show(rec):
        print(json.dumps(rec, sort_keys=True), flush=True)

    result = trainer.train(net, train_set, [e for e in val_set if e.readable], charset, tcfg, acfg,
                           out_dir=args.out, log=show, extra={"augment": configio.to_dict(acfg)})
    print(f"best score {result.best_val:.4f} at epoch {result.best_epoch}")
    return EXIT_OK


def _load_checkpoint_with_aug(path, charset):
    net, extra = network.load_checkpoint(path, vocab=charset.num_classes, return_extra=True)
    aug_d = extra.get("augment")
    aug = configio.from_dict(AugmentConfig, aug_d) if aug_d else AugmentConfig(
        target_h=net.config.input_h, target_w=net.config.input_w, channels=net.config.channels
    )
    return net, aug


def cmd_eval(args, argv):
    _need_file(args.checkpoint, "checkpoint (--checkpoint)")
    _need_file(args.charset, "charset file (--charset)")
    _need_file(args.data, "annotation file (--data)")
    charset = Charset.load(args.charset)
    net, aug = _load_checkpoint_with_aug(args.checkpoint, charset)
    examples = load_examples(read_annotations(args.data))
    modes = {"greedy": ("greedy",), "beam": ("beam",), "both": ("greedy", "beam")}[args.decode]
    reports = evalmetrics.evaluate(net, examples, charset, aug, modes, args.beam_width,
                                   keep_predictions=bool(args.dump_preds))
    if args.tta:
        scales = _scales(args.scales)
        hits = 0
        preds = []
        for e in examples:
            pred = "" if not e.readable else evalmetrics.tta_decode(net, e.image, charset, aug, scales, args.tta)
            ok = int(e.readable) and evalmetrics.sequence_accuracy(pred, e.text)
            hits += ok
            preds.append((e.path, e.text, pred, ok))
        per_length = {}
        for e, (_, _, _, ok) in zip(examples, preds):
            b = per_length.setdefault(len(e.text.replace(" ", "")), [0, 0])
            b[0] += 1
            b[1] += ok
        reports[f"tta_{args.tta}"] = evalmetrics.EvalReport(
            len(examples), hits, hits / len(examples), per_length, f"tta_{args.tta}",
            unreadable=[e.path for e in examples if not e.readable],
            predictions=preds if args.dump_preds else [],
        )
    os.makedirs(args.out, exist_ok=True)
    evalmetrics.write_report(os.path.join(args.out, "eval.json"), reports)
    if args.dump_preds:
        last = reports[list(reports)[-1]]
        evalmetrics.write_predictions(args.dump_preds, last)
    for r in reports.values():
        print(r.table())
        print()
    write_manifest(args.out, argv, "eval", {"decode": args.decode, "beam_width": args.beam_width,
                                            "tta": args.tta, "scales": args.scales}, args.seed)
    unreadable = next(iter(reports.values())).unreadable
    return EXIT_PARTIAL if unreadable else EXIT_OK


def cmd_decode(args, argv):
    _need_file(args.matrix, "matrix file (--matrix)")
    _need_file(args.charset, "charset file (--charset)")
    charset = Charset.load(args.charset)
    lp = ctc.read_matrix(args.matrix)
    if lp.shape[1] != charset.num_classes:
        raise UsageError(f"matrix has V={lp.shape[1]} but the charset has {charset.num_classes} classes")
    lp = ctc.check_log_probs(lp)
    if args.greedy or not args.beam_width:
        text = evalmetrics.decode(lp, charset, evalmetrics.GREEDY)
    else:
        text = evalmetrics.decode(lp, charset, evalmetrics.BEAM, args.beam_width)
    print(text)
    if args.out:
        write_manifest(args.out, argv, "decode", {"greedy": bool(args.greedy), "beam_width": args.beam_width},
                       args.seed, {"text": text})
    return EXIT_OK


def cmd_overfit(args, argv):
    charset, cfg, seed = _load_train_inputs(args)
    tcfg, acfg, ncfg = build_configs(cfg, charset.num_classes, seed)
    acfg = acfg.replace(target_h=ncfg.input_h, target_w=ncfg.input_w)
    ncfg = ncfg.replace(keep_prob=1.0)
    rungs = tuple(float(r) if "." in r else int(r) for r in args.rungs.split(","))
    plan = trainer.OverfitPlan(rungs=rungs, thresholds=(args.threshold,) * len(rungs),
                               max_iters=args.max_iters, batch_size=args.rung_batch,
                               lr=args.lr or trainer.OverfitPlan.lr)
    examples = _examples_or_fail(read_annotations(args.data), charset, "training")
    reports = trainer.run_overfit_ladder(lambda: network.build(ncfg), examples, charset, acfg, plan, seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "overfit.json"), "w", encoding="utf-8") as f:
        json.dump([r.to_dict() for r in reports], f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(args.out, argv, "overfit", {**cfg, "rungs": list(rungs), "max_iters": args.max_iters}, seed)
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"rung {r.size:>6}: {status} acc={r.accuracy:.3f} iters={r.iterations} {r.note}")
    return EXIT_OK


def cmd_synth(args, argv):
    samples = synth.make_corpus(args.out, args.n, args.vocab, args.seed, args.min_len, args.max_len, args.format)
    write_manifest(args.out, argv, "synth", {"n": args.n, "vocab": args.vocab, "min_len": args.min_len,
                                             "max_len": args.max_len, "format": args.format}, args.seed)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------------


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"global seed (default {DEFAULT_SEED})")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging")

    p = Parser(prog="crnnkit", description="Desk-scale CTC text recognition toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=Parser)

    s = sub.add_parser("stats", parents=[common], help="corpus statistics report")
    s.add_argument("--data", required=True, help="annotation TSV")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--val-data", help="separate validation annotation TSV")
    s.add_argument("--split-ratio", type=float, help="split --data into train/val with this train fraction")
    s.add_argument("--workers", type=int, default=4, help="image scanning threads")
    s.add_argument("--audit", type=int, default=0, help="export N random samples for label review")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("charset", parents=[common], help="build the charset file from annotations")
    s.add_argument("--data", required=True, help="annotation TSV")
    s.add_argument("--out", required=True, help="charset file to write")
    s.set_defaults(func=cmd_charset)

    s = sub.add_parser("augment", parents=[common], help="augmentation tools")
    s.add_argument("action", choices=["preview"])
    s.add_argument("--image", required=True, help="input image")
    s.add_argument("--config", help="augment config file")
    s.add_argument("--n", type=int, default=8, help="number of variants")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--format", choices=["png", "ppm"], default="png")
    s.set_defaults(func=cmd_augment)

    def train_flags(s):
        s.add_argument("--config", help="run config file (train./augment./net. keys)")
        s.add_argument("--data", help="training annotation TSV")
        s.add_argument("--charset", help="charset file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--epochs", type=int, help="override train.epochs")
        s.add_argument("--batch-size", type=int, help="override train.batch_size")
        s.add_argument("--lr", type=float, help="override the initial learning rate")

    s = sub.add_parser("train", parents=[common], help="train a network")
    train_flags(s)
    s.add_argument("--val", help="validation annotation TSV")
    s.add_argument("--val-ratio", type=float, help="hold out this fraction of --data for validation")
    s.add_argument("--no-augment", action="store_true", help="disable the augmentation chain")
    s.add_argument("--multi-scale", help="e.g. 32x320,48x480,64x640")
    s.add_argument("--stop-at", type=float, help="stop once val accuracy reaches this value")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("overfit", parents=[common], help="run the over-fit ladder")
    train_flags(s)
    s.add_argument("--rungs", default="1,8,0.1", help="comma list of sizes (int) or fractions (float)")
    s.add_argument("--threshold", type=float, default=1.0, help="train accuracy required per rung")
    s.add_argument("--max-iters", type=int, default=500)
    s.add_argument("--rung-batch", type=int, default=8)
    s.set_defaults(func=cmd_overfit)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="annotation TSV")
    s.add_argument("--charset", required=True)
    s.add_argument("--out", default=".", help="directory for eval.json")
    s.add_argument("--decode", choices=["greedy", "beam", "both"], default="greedy")
    s.add_argument("--beam-width", type=int, default=8)
    s.add_argument("--tta", choices=[evalmetrics.BEST_SCORE, evalmetrics.AVG_PROB])
    s.add_argument("--scales", default="32x320,48x480,64x640", help="TTA scales")
    s.add_argument("--dump-preds", help="write path/truth/pred/correct TSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("decode", parents=[common], help="decode a serialized log-prob matrix")
    s.add_argument("--matrix", required=True)
    s.add_argument("--charset", required=True)
    s.add_argument("--greedy", action="store_true")
    s.add_argument("--beam-width", type=int, default=0)
    s.add_argument("--out", help="directory for run-manifest.json")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--vocab", type=int, default=40)
    s.add_argument("--min-len", type=int, default=3)
    s.add_argument("--max-len", type=int, default=8)
    s.add_argument("--format", choices=["ppm", "png"], default="ppm")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is None and args.func not in (cmd_train, cmd_overfit):
        args.seed = DEFAULT_SEED
    try:
        return args.func(args, argv)
    except (UsageError, ValueError, OSError) as exc:
        print(f"crnnkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

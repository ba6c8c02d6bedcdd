"""Command line entry point: ``logitmixoe <verb> [options]``.

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data, pipeline
from .config import ConfigError, ExperimentConfig, load_config
from .model import load_checkpoint
from .training import finetune, pretrain

log = logging.getLogger("logitmixoe")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def _config(args) -> ExperimentConfig:
    return load_config(args.config, args.overrides)


def _new_dir(path: str, overwrite: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise ConfigError(f"{out}: exists and is not empty (use --overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate_data(args) -> None:
    cfg = _config(args)
    bundle = data.generate(cfg.synthetic_spec())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save(bundle, out)
    print(f"wrote {out} ({len(bundle.id_train.x)} train, {len(bundle.id_test.x)} test, "
          f"{len(bundle.ood_holdout)} held-out OOD, {len(bundle.aux_ood)} aux)")


def cmd_pretrain(args) -> None:
    cfg = _config(args)
    bundle = data.load(args.data)
    out = _new_dir(args.out, args.overwrite)
    params, record = pretrain(bundle.id_view(), pipeline.model_config(cfg, bundle),
                              pipeline.pretrain_config(cfg))
    pipeline.finish_stage("pretrained", params, record, bundle, out, cfg)
    print(f"wrote {out / 'checkpoint.json'}")


def cmd_finetune(args) -> None:
    cfg = _config(args)
    bundle = data.load(args.data)
    base = load_checkpoint(args.checkpoint)
    out = _new_dir(args.out, args.overwrite)
    try:
        tcfg = pipeline.finetune_config(cfg, args.variant)
    except ValueError as e:
        raise ConfigError(f"--variant: {e}") from e
    params, record = finetune(base, bundle, tcfg)
    pipeline.finish_stage(args.variant, params, record, bundle, out, cfg)
    print(f"wrote {out / 'checkpoint.json'}")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    dump_ = pipeline.read_logits(args.logits)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report, extra = pipeline.write_evaluation(args.method, dump_, out, cfg.eval.score_kinds)
    for r in report.rows:
        print(f"{r.score_kind:10s} acc={r.accuracy:.4f} auroc={r.auroc:.4f} fpr95={r.fpr95:.4f}")


def cmd_analyze(args) -> None:
    cfg = _config(args)
    dump_ = pipeline.read_logits(args.logits)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = load_checkpoint(args.checkpoint) if args.checkpoint else None
    bundle = data.load(args.data) if args.data else None
    pipeline.write_analysis(dump_, out, cfg, params, bundle)
    print(f"wrote analysis to {out}")


def cmd_run(args) -> None:
    cfg = _config(args)
    rows = pipeline.run(cfg, overwrite=args.overwrite, jobs=args.jobs)
    primary = cfg.eval.primary_score
    for r in rows:
        print(f"{r['variant']:18s} acc={r['accuracy']:.4f} auroc={r[f'auroc_{primary}']:.4f} "
              f"fpr95={r[f'fpr95_{primary}']:.4f}")


def cmd_sweep(args) -> None:
    cfg = _config(args)
    try:
        values = [float(v) for v in args.values.replace(",", " ").split()]
    except ValueError as e:
        raise ConfigError(f"--values: {e}") from e
    table = pipeline.sweep(cfg, args.param, values, overwrite=args.overwrite, jobs=args.jobs)
    for r in table:
        print(f"{args.param}={r['value']:<8g} {r['variant']:18s} acc={r['accuracy']:.4f} "
              f"auroc={r['auroc']:.4f} fpr95={r['fpr95']:.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logitmixoe",
                                     description="OOD detection by logit-space mixing, at desk scale")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset CSV")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("pretrain", help="ID-only pretraining from a dataset file")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune one variant from a checkpoint")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", required=True, help="e.g. oe, mixoe+sim, logit_mixoe")
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="metrics from a stored logit dump")
    _add_config_args(p)
    p.add_argument("--logits", required=True)
    p.add_argument("--method", default="model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="histogram, PCA and responses from a logit dump")
    _add_config_args(p)
    p.add_argument("--logits", required=True)
    p.add_argument("--checkpoint", help="with --data, also emit per-sample responses")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    for verb, helptext in (("run", "full pipeline for every variant"),
                           ("sweep", "full pipeline per alpha or beta value")):
        p = sub.add_parser(verb, help=helptext)
        _add_config_args(p)
        p.add_argument("--overwrite", action="store_true")
        p.add_argument("--jobs", type=int, default=1, help="variants fine-tuned in parallel")
        if verb == "sweep":
            p.add_argument("--param", required=True, choices=sorted(pipeline.SWEEP_PARAMS))
            p.add_argument("--values", required=True, help="comma-separated values")
            p.set_defaults(func=cmd_sweep)
        else:
            p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - mapped to the runtime-failure exit code
        log.debug("failure", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

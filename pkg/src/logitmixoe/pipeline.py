"""Experiment orchestration: pretrain -> fine-tune -> evaluate -> analyze.

Layout of a run directory::

    config.txt            resolved config
    manifest.json         per-stage status
    comparison.csv        one row per fine-tune variant
    data/dataset.csv      (+ dataset.meta.json)
    pretrained/           checkpoint.json, run_record.csv, logits.csv, metrics.*, analysis
    variants/<name>/      same files for each fine-tune variant

Seeds: dataset uses ``dataset.seed`` (default ``global_seed``); everything
else derives from ``global_seed`` via :func:`config.derive_seed`. All
variants share the fine-tune batch-order seed; each variant's mixing
randomness uses ``derive_seed(global_seed, variant_name)``.
"""

from __future__ import annotations

import csv
import json
import logging
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import analysis, data, ood_eval
from .config import ConfigError, ExperimentConfig, dump, parse_variant
from .mixing import MixSpec
from .model import MlpConfig, MlpParams, load_checkpoint, predict_logits, save_checkpoint
from .training import RunRecord, TrainConfig, finetune, pretrain

log = logging.getLogger(__name__)

LOGIT_SPLITS = ("id_test", "ood_holdout", "aux_test")


class RunFailed(RuntimeError):
    pass


def variant_dirname(name: str) -> str:
    return name.replace("+", "-")


# ------------------------------------------------------------- configs

def model_config(cfg: ExperimentConfig, bundle: data.DatasetBundle) -> MlpConfig:
    seed = cfg.model.seed if cfg.model.seed is not None else cfg.seed_for("model")
    return MlpConfig(bundle.input_dim, cfg.model.hidden_dims, bundle.num_classes, seed)


def pretrain_config(cfg: ExperimentConfig) -> TrainConfig:
    p = cfg.pretrain
    seed = p.seed if p.seed is not None else cfg.seed_for("pretrain")
    return TrainConfig(epochs=p.epochs, batch_size=p.batch_size, lr0=p.lr0, eta_min=p.eta_min,
                       weight_decay=p.weight_decay, momentum=p.momentum, seed=seed)


def finetune_config(cfg: ExperimentConfig, variant: str) -> TrainConfig:
    f = cfg.finetune
    method, sim = parse_variant(variant)
    seed = f.seed if f.seed is not None else cfg.seed_for("finetune")
    mix = MixSpec(alpha=f.alpha, beta_weight=f.beta, lambda_policy=f.lambda_policy,
                  share_lambda_across_spaces=f.share_lambda)
    return TrainConfig(epochs=f.epochs, batch_size=f.batch_size, lr0=f.lr0, eta_min=f.eta_min,
                       weight_decay=f.weight_decay, momentum=f.momentum, seed=seed,
                       method_tag=method, mix=mix, sim_oe_enabled=sim, sim_weight=f.sim_weight,
                       frozen_teacher=f.frozen_teacher, mix_seed=cfg.seed_for(variant))


# ------------------------------------------------------------- logit dumps

@dataclass
class LogitDump:
    logits: dict[str, np.ndarray]
    id_labels: np.ndarray


def compute_logits(params: MlpParams, bundle: data.DatasetBundle) -> LogitDump:
    xs = {"id_test": bundle.id_test.x, "ood_holdout": bundle.ood_holdout, "aux_test": bundle.aux_test}
    return LogitDump({s: predict_logits(params, xs[s]) for s in LOGIT_SPLITS},
                     bundle.id_test.labels.copy())


def write_logits(dump_: LogitDump, path: Path) -> None:
    k = dump_.logits["id_test"].shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "label"] + [f"logit_{i}" for i in range(k)])
        for split in LOGIT_SPLITS:
            for i, row in enumerate(dump_.logits[split]):
                lab = str(int(dump_.id_labels[i])) if split == "id_test" else ""
                w.writerow([split, lab] + [repr(float(v)) for v in row])


def read_logits(path: Path) -> LogitDump:
    rows: dict[str, list] = {s: [] for s in LOGIT_SPLITS}
    labels = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["split", "label"]:
            raise ValueError(f"{path}: line 1: not a logit dump header")
        k = len(header) - 2
        for row in reader:
            if len(row) != k + 2 or row[0] not in rows:
                raise ValueError(f"{path}: line {reader.line_num}: malformed row")
            rows[row[0]].append([float(v) for v in row[2:]])
            if row[0] == "id_test":
                labels.append(int(row[1]))
    return LogitDump({s: np.array(v, dtype=np.float64).reshape(-1, k) for s, v in rows.items()},
                     np.array(labels, dtype=np.int64))


# ------------------------------------------------------------- stages

def evaluate_dump(name: str, dump_: LogitDump, kinds) -> tuple[ood_eval.MetricsReport, dict]:
    report = ood_eval.evaluate_logits(name, dump_.logits["id_test"], dump_.id_labels,
                                      dump_.logits["ood_holdout"], kinds)
    aux = dump_.logits["aux_test"]
    extra = {}
    if len(aux):
        extra = {"aux_logit_l2_mean": float(np.linalg.norm(aux, axis=1).mean()),
                 "aux_msp_mean": float(ood_eval.scores(aux, "msp").mean())}
    return report, extra


def write_evaluation(name: str, dump_: LogitDump, out: Path, kinds) -> tuple[ood_eval.MetricsReport, dict]:
    report, extra = evaluate_dump(name, dump_, kinds)
    report.write_csv(out / "metrics.csv")
    doc = {"method": name, "rows": [vars(r) for r in report.rows], **extra}
    (out / "metrics.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return report, extra


def write_analysis(dump_: LogitDump, out: Path, cfg: ExperimentConfig,
                   params: MlpParams | None = None, bundle: data.DatasetBundle | None = None) -> None:
    id_l, ood_l = dump_.logits["id_test"], dump_.logits["ood_holdout"]
    hist = analysis.logit_norm_histogram(id_l, ood_l, cfg.analysis.num_bins)
    analysis.write_histogram_csv(hist, out / "hist.csv")
    (out / "hist.svg").write_text(analysis.histogram_svg(hist))
    pca = analysis.pca_project(id_l, ood_l, cfg.analysis.pca_fit)
    analysis.write_pca_csv(pca, out / "pca.csv")
    (out / "pca.svg").write_text(analysis.pca_svg(pca))
    if params is not None and bundle is not None and len(bundle.ood_holdout):
        resp = analysis.sample_logit_responses(params, bundle.id_test.x[0], bundle.ood_holdout[0],
                                               cfg.analysis.response_lambda)
        analysis.write_responses_csv(resp, out / "responses.csv")
        (out / "responses.svg").write_text(analysis.responses_svg(resp))


def finish_stage(name: str, params: MlpParams, record: RunRecord, bundle: data.DatasetBundle,
                 out: Path, cfg: ExperimentConfig) -> tuple[ood_eval.MetricsReport, dict]:
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "checkpoint.json")
    record.checkpoint = str(out / "checkpoint.json")
    record.write_csv(out / "run_record.csv")
    dump_ = compute_logits(params, bundle)
    write_logits(dump_, out / "logits.csv")
    result = write_evaluation(name, dump_, out, cfg.eval.score_kinds)
    write_analysis(dump_, out, cfg, params, bundle)
    return result


def run_variant(cfg: ExperimentConfig, variant: str, data_path: str, ckpt_path: str,
                out_dir: str) -> dict:
    """Fine-tune one variant from disk artifacts; returns its comparison row."""
    bundle = data.load(data_path)
    base = load_checkpoint(ckpt_path)
    params, record = finetune(base, bundle, finetune_config(cfg, variant))
    report, extra = finish_stage(variant, params, record, bundle, Path(out_dir), cfg)
    return comparison_row(variant, report, extra)


def comparison_row(name: str, report: ood_eval.MetricsReport, extra: dict) -> dict:
    row = {"variant": name, "accuracy": report.rows[0].accuracy}
    for r in report.rows:
        row[f"auroc_{r.score_kind}"] = r.auroc
        row[f"fpr95_{r.score_kind}"] = r.fpr95
    row.update(extra)
    return row


def write_table(rows: list[dict], path: Path) -> None:
    cols = list(rows[0])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else repr(float(r[c])) for c in cols])


def read_table(path: Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k not in ("variant",):
                try:
                    r[k] = float(v)
                except ValueError:
                    pass
    return rows


def load_or_generate(cfg: ExperimentConfig) -> data.DatasetBundle:
    if cfg.dataset.path:
        return data.load(cfg.dataset.path)
    return data.generate(cfg.synthetic_spec())


def _prepare_output(out: Path, overwrite: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise ConfigError(f"output_dir: {out} exists and is not empty (use --overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _write_manifest(out: Path, manifest: dict) -> None:
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def run(cfg: ExperimentConfig, overwrite: bool = False, jobs: int = 1) -> list[dict]:
    """Run the whole pipeline; returns the comparison rows.

    Raises:
        ConfigError: invalid config or occupied output directory.
        RunFailed: a stage failed; earlier outputs and the manifest remain.
    """
    out = Path(cfg.output_dir)
    _prepare_output(out, overwrite)
    (out / "config.txt").write_text(dump(cfg))
    variants = list(cfg.finetune.variants)
    manifest = {"pretrained": "pending", "variants": {v: "pending" for v in variants},
                "seconds": {}}
    _write_manifest(out, manifest)

    try:
        t0 = time.perf_counter()
        bundle = load_or_generate(cfg)
        (out / "data").mkdir()
        data_path = out / "data" / "dataset.csv"
        data.save(bundle, data_path)
        params, record = pretrain(bundle.id_view(), model_config(cfg, bundle), pretrain_config(cfg))
        finish_stage("pretrained", params, record, bundle, out / "pretrained", cfg)
        manifest["pretrained"] = "complete"
        manifest["seconds"]["pretrained"] = round(time.perf_counter() - t0, 3)
        _write_manifest(out, manifest)
    except Exception as e:
        manifest["pretrained"] = f"failed: {e}"
        _write_manifest(out, manifest)
        raise RunFailed(f"pretraining failed: {e}") from e

    ckpt = str(out / "pretrained" / "checkpoint.json")
    args = [(cfg, v, str(data_path), ckpt, str(out / "variants" / variant_dirname(v)))
            for v in variants]
    rows: dict[str, dict] = {}
    failure = None
    if jobs > 1 and len(variants) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {v: pool.submit(run_variant, *a) for v, a in zip(variants, args)}
            for v, fut in futures.items():
                try:
                    rows[v] = fut.result()
                    manifest["variants"][v] = "complete"
                except Exception as e:  # noqa: BLE001 - recorded in the manifest
                    manifest["variants"][v] = f"failed: {e}"
                    failure = failure or (v, e)
                _write_manifest(out, manifest)
    else:
        for v, a in zip(variants, args):
            t0 = time.perf_counter()
            try:
                rows[v] = run_variant(*a)
            except Exception as e:  # noqa: BLE001 - recorded in the manifest
                manifest["variants"][v] = f"failed: {e}"
                _write_manifest(out, manifest)
                failure = (v, e)
                break
            manifest["variants"][v] = "complete"
            manifest["seconds"][v] = round(time.perf_counter() - t0, 3)
            _write_manifest(out, manifest)
            log.info("variant %s done", v)

    if rows:
        write_table([rows[v] for v in variants if v in rows], out / "comparison.csv")
    if failure is not None:
        raise RunFailed(f"variant {failure[0]!r} failed: {failure[1]}") from failure[1]
    return [rows[v] for v in variants]


SWEEP_PARAMS = {"alpha": "alpha", "beta": "beta"}


def sweep(cfg: ExperimentConfig, parameter: str, values: list[float], overwrite: bool = False,
          jobs: int = 1) -> list[dict]:
    """Run the pipeline once per value of finetune.alpha or finetune.beta."""
    if parameter not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {sorted(SWEEP_PARAMS)}, got {parameter!r}")
    if not values:
        raise ConfigError("sweep: at least one value is required")
    for v in values:
        if parameter == "alpha" and not v > 0:
            raise ConfigError(f"sweep: alpha must be > 0, got {v}")
        if parameter == "beta" and v < 0:
            raise ConfigError(f"sweep: beta must be >= 0, got {v}")
    root = Path(cfg.output_dir)
    _prepare_output(root, overwrite)
    primary = cfg.eval.primary_score
    table = []
    for v in values:
        sub = replace(cfg, output_dir=str(root / f"{parameter}={v!r}"),
                      finetune=replace(cfg.finetune, **{SWEEP_PARAMS[parameter]: float(v)}))
        for row in run(sub, overwrite=True, jobs=jobs):
            table.append({"value": float(v), "variant": row["variant"], "accuracy": row["accuracy"],
                          "auroc": row[f"auroc_{primary}"], "fpr95": row[f"fpr95_{primary}"]})
    with (root / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "variant", "accuracy", "auroc", "fpr95"])
        for r in table:
            w.writerow([repr(r["value"]), r["variant"], repr(r["accuracy"]), repr(r["auroc"]),
                        repr(r["fpr95"])])
    return table

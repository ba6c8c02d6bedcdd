"""Flat ``section.key = value`` experiment configs.

Example::

    global_seed = 0
    output_dir = runs/default
    dataset.num_groups = 4
    model.hidden_dims = 64, 64
    pretrain.epochs = 30
    finetune.variants = ce_only, oe, mixoe, logit_mixoe, logit_mixoe+sim
    finetune.alpha = 1.0

Blank lines and ``#`` comments are ignored. Any key can be overridden with
``--set section.key=value`` on the command line.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import SyntheticSpec
from .losses import METHOD_TAGS, SIM_OE_METHODS
from .ood_eval import SCORE_KINDS

MASK64 = (1 << 64) - 1
SIM_SUFFIX = "+sim"
DEFAULT_VARIANTS = ("ce_only", "oe", "mixoe", "mixoe+sim", "logit_mixoe", "logit_mixoe+sim")


class ConfigError(ValueError):
    """A config file or override is invalid; the message names the field."""


def stable_hash(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def derive_seed(global_seed: int, name: str) -> int:
    """global_seed XOR the first 8 bytes (little-endian) of sha256(name)."""
    return (global_seed ^ stable_hash(name)) & MASK64


def parse_variant(name: str) -> tuple[str, bool]:
    """``"logit_mixoe+sim"`` -> ("logit_mixoe", True)."""
    if name.endswith(SIM_SUFFIX):
        base = name[: -len(SIM_SUFFIX)]
        if base not in SIM_OE_METHODS:
            raise ConfigError(f"finetune.variants: {name!r}: +sim only applies to {SIM_OE_METHODS}")
        return base, True
    return name, False


@dataclass(frozen=True)
class ModelSection:
    hidden_dims: tuple[int, ...] = (64, 64)
    seed: int | None = None


@dataclass(frozen=True)
class PretrainSection:
    epochs: int = 30
    batch_size: int = 32
    lr0: float = 0.05
    eta_min: float = 0.0
    weight_decay: float = 1e-5
    momentum: float = 0.9
    seed: int | None = None


@dataclass(frozen=True)
class FinetuneSection:
    epochs: int = 10
    batch_size: int = 32
    lr0: float = 0.005
    eta_min: float = 0.0
    weight_decay: float = 1e-5
    momentum: float = 0.9
    seed: int | None = None
    variants: tuple[str, ...] = DEFAULT_VARIANTS
    alpha: float = 1.0
    beta: float = 1.0
    lambda_policy: str = "per_batch"
    share_lambda: bool = True
    sim_weight: float = 1.0
    frozen_teacher: bool = False


@dataclass(frozen=True)
class EvalSection:
    score_kinds: tuple[str, ...] = SCORE_KINDS
    primary_score: str = "msp"


@dataclass(frozen=True)
class AnalysisSection:
    num_bins: int = 40
    pca_fit: str = "pooled"
    response_lambda: float = 0.5


@dataclass(frozen=True)
class DatasetSection:
    path: str | None = None
    num_groups: int = 4
    classes_per_group: int = 4
    holdout_per_group: int = 1
    samples_per_class: int = 200
    input_dim: int = 2
    group_separation: float = 10.0
    class_separation: float = 2.0
    noise_std: float = 0.6
    aux_ood_kind: str = "uniform_box"
    aux_samples: int = 2000
    box_inflation: float = 1.5
    seed: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    global_seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalSection = field(default_factory=EvalSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def synthetic_spec(self) -> SyntheticSpec:
        d = self.dataset
        kw = {f.name: getattr(d, f.name) for f in fields(d) if f.name not in ("path", "seed")}
        seed = self.global_seed if d.seed is None else d.seed
        return SyntheticSpec(**kw, seed=seed)

    def seed_for(self, name: str) -> int:
        return derive_seed(self.global_seed, name)


_SECTIONS = {f.name for f in fields(ExperimentConfig) if f.name not in ("global_seed", "output_dir")}


def _convert(raw: str, annotation: str, key: str):
    raw = raw.strip()
    optional = "None" in annotation
    if optional and raw.lower() in ("", "none"):
        return None
    base = annotation.replace(" | None", "")
    try:
        if base == "int":
            v = int(raw, 0)
            if v < 0:
                raise ValueError("must be non-negative")
            return v
        if base == "float":
            return float(raw)
        if base == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError("expected true/false")
        if base == "str":
            return raw
        if base == "tuple[int, ...]":
            return tuple(int(p) for p in raw.replace(",", " ").split())
        if base == "tuple[str, ...]":
            return tuple(p.strip() for p in raw.split(",") if p.strip())
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {base} ({e})") from None
    raise ConfigError(f"{key}: unsupported field type {annotation}")


def apply_settings(cfg: ExperimentConfig, settings: list[tuple[str, str, str]]) -> ExperimentConfig:
    """Apply (key, value, origin) triples; ``origin`` prefixes diagnostics."""
    top = {f.name: f for f in fields(ExperimentConfig)}
    sections: dict[str, dict] = {}
    top_updates: dict = {}
    for key, value, origin in settings:
        where = f"{origin}: {key}" if origin else key
        if "." not in key:
            if key not in ("global_seed", "output_dir"):
                raise ConfigError(f"{where}: unknown key")
            top_updates[key] = _convert(value, str(top[key].type), where)
            continue
        sec, _, name = key.partition(".")
        if sec not in _SECTIONS:
            raise ConfigError(f"{where}: unknown section {sec!r}")
        sec_fields = {f.name: f for f in fields(getattr(cfg, sec))}
        if name not in sec_fields:
            raise ConfigError(f"{where}: unknown key {name!r} in section {sec!r}")
        sections.setdefault(sec, {})[name] = _convert(value, str(sec_fields[name].type), where)
    for sec, upd in sections.items():
        top_updates[sec] = replace(getattr(cfg, sec), **upd)
    cfg = replace(cfg, **top_updates)
    validate(cfg)
    return cfg


def parse_text(text: str, origin: str = "<config>") -> list[tuple[str, str, str]]:
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {line.strip()!r}")
        k, _, v = s.partition("=")
        out.append((k.strip(), v.strip(), f"{origin}:{n}"))
    return out


def parse_override(item: str) -> tuple[str, str, str]:
    if "=" not in item:
        raise ConfigError(f"--set {item!r}: expected section.key=value")
    k, _, v = item.partition("=")
    return k.strip(), v.strip(), "--set"


def load_config(path: str | Path | None, overrides: list[str] = ()) -> ExperimentConfig:
    settings = []
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"{path}: cannot read config ({e})") from e
        settings += parse_text(text, str(path))
    settings += [parse_override(o) for o in overrides]
    return apply_settings(ExperimentConfig(), settings)


def validate(cfg: ExperimentConfig) -> None:
    """Check every cross-field rule, raising ConfigError naming the field."""
    ft = cfg.finetune
    if not cfg.output_dir:
        raise ConfigError("output_dir: must be non-empty")
    if cfg.global_seed > MASK64:
        raise ConfigError("global_seed: must fit in 64 unsigned bits")
    if not ft.variants:
        raise ConfigError("finetune.variants: at least one variant is required")
    if len(set(ft.variants)) != len(ft.variants):
        raise ConfigError(f"finetune.variants: duplicates in {ft.variants}")
    for v in ft.variants:
        base, _ = parse_variant(v)
        if base not in METHOD_TAGS:
            raise ConfigError(f"finetune.variants: unknown method {v!r}")
    if not ft.alpha > 0:
        raise ConfigError(f"finetune.alpha: must be > 0, got {ft.alpha}")
    if ft.beta < 0:
        raise ConfigError(f"finetune.beta: must be >= 0, got {ft.beta}")
    if ft.lambda_policy not in ("per_batch", "per_sample"):
        raise ConfigError(f"finetune.lambda_policy: unknown {ft.lambda_policy!r}")
    for sec in ("pretrain", "finetune"):
        s = getattr(cfg, sec)
        if s.batch_size < 1:
            raise ConfigError(f"{sec}.batch_size: must be >= 1")
        if not s.lr0 > 0:
            raise ConfigError(f"{sec}.lr0: must be > 0")
        if not 0 <= s.eta_min <= s.lr0:
            raise ConfigError(f"{sec}.eta_min: must be in [0, lr0]")
    for k in cfg.eval.score_kinds:
        if k not in SCORE_KINDS:
            raise ConfigError(f"eval.score_kinds: unknown kind {k!r}")
    if cfg.eval.primary_score not in cfg.eval.score_kinds:
        raise ConfigError(f"eval.primary_score: {cfg.eval.primary_score!r} not in eval.score_kinds")
    if cfg.analysis.num_bins < 1:
        raise ConfigError("analysis.num_bins: must be >= 1")
    if cfg.analysis.pca_fit not in ("pooled", "id"):
        raise ConfigError(f"analysis.pca_fit: expected pooled or id, got {cfg.analysis.pca_fit!r}")
    if not 0 <= cfg.analysis.response_lambda <= 1:
        raise ConfigError("analysis.response_lambda: must be in [0, 1]")
    if any(h < 1 for h in cfg.model.hidden_dims):
        raise ConfigError(f"model.hidden_dims: sizes must be positive, got {cfg.model.hidden_dims}")
    if cfg.dataset.path is None:
        try:
            cfg.synthetic_spec()
        except ValueError as e:
            raise ConfigError(f"dataset: {e}") from e


def dump(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` back to the flat text format (round-trips via parse_text)."""
    def fmt(v) -> str:
        if v is None:
            return "none"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    lines = [f"global_seed = {cfg.global_seed}", f"output_dir = {cfg.output_dir}"]
    for sec in sorted(_SECTIONS):
        obj = getattr(cfg, sec)
        lines += [f"{sec}.{f.name} = {fmt(getattr(obj, f.name))}" for f in fields(obj)]
    return "\n".join(lines) + "\n"

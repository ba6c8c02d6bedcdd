"""Two-phase training: ID-only pretraining, then method-specific fine-tuning."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .data import DatasetBundle, IdView, batches, one_hot
from .mixing import MixSpec, draw_lambdas, mix_inputs, mix_label_with_uniform, pair_with_outliers
from .model import MlpConfig, MlpParams, forward, mlp_init, predict_logits
from .tensor import Tensor, backward

OE_FAMILY = ("oe", "mixoe", "logit_mixoe")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr0: float = 0.05
    eta_min: float = 0.0
    weight_decay: float = 1e-5
    momentum: float = 0.9
    seed: int = 0
    # fine-tune only
    method_tag: str = "ce_only"
    mix: MixSpec = field(default_factory=MixSpec)
    sim_oe_enabled: bool = False
    sim_weight: float = 1.0
    frozen_teacher: bool = False
    mix_seed: int | None = None  # defaults to seed

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 <= self.eta_min <= self.lr0:
            raise ValueError(f"need 0 <= eta_min <= lr0, got eta_min={self.eta_min}")
        if self.weight_decay < 0 or self.momentum < 0:
            raise ValueError("weight_decay and momentum must be >= 0")
        if self.method_tag not in losses.METHOD_TAGS:
            raise ValueError(f"unknown method_tag {self.method_tag!r}")
        if self.sim_oe_enabled and self.method_tag not in losses.SIM_OE_METHODS:
            raise ValueError(f"sim_oe cannot be combined with method {self.method_tag!r}")


@dataclass
class EpochStats:
    epoch: int
    lr: float
    total: float
    id_term: float
    regularizer_term: float
    consistency_term: float
    max_decomposition_error: float = 0.0


@dataclass
class RunRecord:
    epochs: list[EpochStats] = field(default_factory=list)
    checkpoint: str | None = None
    wall_seconds: float = 0.0

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "lr", "total", "id_term", "regularizer_term", "consistency_term"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.lr), repr(e.total), repr(e.id_term),
                            repr(e.regularizer_term), repr(e.consistency_term)])


def cosine_lr(epoch: int, total_epochs: int, lr0: float, eta_min: float) -> float:
    if total_epochs < 1:
        raise ValueError(f"total_epochs must be >= 1, got {total_epochs}")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class SgdState:
    velocity: dict[int, np.ndarray] = field(default_factory=dict)


def sgd_step(params: MlpParams | list[Tensor], lr: float, weight_decay: float, momentum: float,
             state: SgdState | None = None) -> SgdState:
    """v <- momentum * v + (grad + wd * p); p <- p - lr * v; grads cleared.

    Weight decay is the classic gradient-coupled L2 form.
    """
    plist = params.parameters() if isinstance(params, MlpParams) else list(params)
    state = state if state is not None else SgdState()
    missing = [i for i, p in enumerate(plist) if p.grad is None]
    if missing:
        raise ValueError(f"sgd_step: parameters {missing} have no gradient")
    for i, p in enumerate(plist):
        g = p.grad + weight_decay * p.data
        v = state.velocity.get(i)
        v = g if v is None else momentum * v + g
        state.velocity[i] = v
        p.data = p.data - lr * v
        p.grad = None
    return state


def _mean_stats(epoch: int, lr: float, items: list[losses.LossBreakdown]) -> EpochStats:
    if not items:
        return EpochStats(epoch, lr, 0.0, 0.0, 0.0, 0.0)
    return EpochStats(
        epoch=epoch,
        lr=lr,
        total=float(np.mean([b.total for b in items])),
        id_term=float(np.mean([b.id_term for b in items])),
        regularizer_term=float(np.mean([b.regularizer_term for b in items])),
        consistency_term=float(np.mean([b.consistency_term for b in items])),
        max_decomposition_error=max(b.decomposition_error() for b in items),
    )


def _train_loop(params: MlpParams, train_x: np.ndarray, train_y: np.ndarray, num_classes: int,
                cfg: TrainConfig, step_loss) -> RunRecord:
    """Shared epoch/batch loop; ``step_loss(idx, x, y_onehot)`` returns a LossBreakdown."""
    record = RunRecord()
    start = time.perf_counter()
    order_rng = np.random.default_rng(cfg.seed)
    state = SgdState()
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.eta_min)
        items = []
        for idx in batches(len(train_x), cfg.batch_size, order_rng):
            bd = step_loss(idx, train_x[idx], one_hot(train_y[idx], num_classes))
            params.zero_grad()
            backward(bd.tensor)
            bd.tensor = None
            state = sgd_step(params, lr, cfg.weight_decay, cfg.momentum, state)
            items.append(bd)
        record.epochs.append(_mean_stats(epoch, lr, items))
    record.wall_seconds = time.perf_counter() - start
    return record


def pretrain(id_data: IdView, model_config: MlpConfig, cfg: TrainConfig) -> tuple[MlpParams, RunRecord]:
    """Minimize the mean cross-entropy on ID training data only."""
    if model_config.num_classes != id_data.num_classes:
        raise ValueError(f"model has {model_config.num_classes} classes, data has "
                         f"{id_data.num_classes}")
    params = mlp_init(model_config)

    def step(idx, x, y):
        return losses.total_loss("ce_only", f_in=forward(params, x), y_in=y)

    record = _train_loop(params, id_data.train.x, id_data.train.labels, id_data.num_classes, cfg,
                         step)
    return params, record


def finetune(checkpoint: MlpParams, bundle: DatasetBundle, cfg: TrainConfig
             ) -> tuple[MlpParams, RunRecord]:
    """Continue training from ``checkpoint`` with ``cfg.method_tag``.

    ID batch order comes from ``cfg.seed`` and all mixing randomness (aux
    draws, lambdas, mixup partners) from ``cfg.mix_seed``, so two methods
    fine-tuned with the same ``seed`` see the same ID batches.
    """
    method = cfg.method_tag
    if checkpoint.config.input_dim != bundle.input_dim:
        raise ValueError(f"checkpoint expects input_dim {checkpoint.config.input_dim}, data has "
                         f"{bundle.input_dim}")
    if checkpoint.config.num_classes != bundle.num_classes:
        raise ValueError(f"checkpoint has {checkpoint.config.num_classes} classes, data has "
                         f"{bundle.num_classes}")
    if method in OE_FAMILY and len(bundle.aux_ood) == 0:
        raise ValueError(f"method {method!r} needs auxiliary OOD data but aux_ood is empty")

    params = checkpoint.copy()
    teacher = checkpoint.copy(requires_grad=False) if cfg.frozen_teacher else None
    mix_rng = np.random.default_rng(cfg.seed if cfg.mix_seed is None else cfg.mix_seed)
    spec = cfg.mix
    aux = bundle.aux_ood
    kw = dict(beta=spec.beta_weight, sim_oe_enabled=cfg.sim_oe_enabled, sim_weight=cfg.sim_weight)

    def teacher_logits(x):
        return None if teacher is None else Tensor(predict_logits(teacher, x))

    def step(idx, x, y):
        if method == "ce_only":
            return losses.total_loss(method, f_in=forward(params, x), y_in=y, **kw)
        if method in ("mixup", "logit_mixing"):
            perm = mix_rng.permutation(len(x))
            lam, lam_logit = draw_lambdas(spec, mix_rng, len(x))
            f_mixed = forward(params, mix_inputs(x, x[perm], lam))
            if method == "mixup":
                return losses.total_loss(method, f_in=None, y_in=y, y_j=y[perm],
                                         f_mixed_input=f_mixed, lam=lam, **kw)
            return losses.total_loss(method, f_in=forward(params, x), y_in=y,
                                     f_out=forward(params, x[perm]), y_j=y[perm],
                                     f_mixed_input=f_mixed, lam=lam, lam_logit=lam_logit, **kw)

        pair, x_out = pair_with_outliers(spec, mix_rng, x, y, idx, aux)
        f_in = forward(params, x)
        if method == "oe":
            return losses.total_loss(method, f_in=f_in, y_in=y, f_out=forward(params, x_out), **kw)
        if method == "mixoe":
            f_mixed = forward(params, pair.mixed_input)
            f_out = forward(params, x_out) if cfg.sim_oe_enabled else None
            return losses.total_loss(method, f_in=f_in, y_in=y, f_out=f_out,
                                     f_mixed_input=f_mixed, y_mixed=pair.mixed_label,
                                     lam=pair.lam, lam_logit=pair.lam_logit,
                                     f_mix_in=teacher_logits(x), f_mix_out=teacher_logits(x_out),
                                     **kw)
        # logit_mixoe: the label follows the coefficient that mixes the logits
        y_mixed = (pair.mixed_label if spec.share_lambda_across_spaces
                   else mix_label_with_uniform(y, pair.lam_logit))
        f_mixed = forward(params, pair.mixed_input) if cfg.sim_oe_enabled else None
        return losses.total_loss(method, f_in=f_in, y_in=y, f_out=forward(params, x_out),
                                 f_mixed_input=f_mixed, y_mixed=y_mixed,
                                 lam=pair.lam, lam_logit=pair.lam_logit,
                                 f_mix_in=teacher_logits(x), f_mix_out=teacher_logits(x_out),
                                 **kw)

    record = _train_loop(params, bundle.id_train.x, bundle.id_train.labels, bundle.num_classes,
                         cfg, step)
    return params, record

"""Training objectives over logits.

Every function accepts either a single logit vector ``[K]`` or a batch
``[B, K]``; batched inputs are reduced by the mean over rows. Targets are
plain arrays (probability vectors), never tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .mixing import mix_logits
from .tensor import Tensor, as_tensor, log_softmax

MethodTag = Literal["ce_only", "mixup", "logit_mixing", "oe", "mixoe", "logit_mixoe"]
METHOD_TAGS: tuple[str, ...] = ("ce_only", "mixup", "logit_mixing", "oe", "mixoe", "logit_mixoe")
SIM_OE_METHODS = ("mixoe", "logit_mixoe")


@dataclass
class LossBreakdown:
    """Scalar loss terms of one objective evaluation.

    ``total == id_term + beta * regularizer_term + consistency_weight * consistency_term``
    where ``consistency_weight`` is 0 unless a consistency loss is active.
    ``tensor`` is the differentiable total.
    """

    total: float
    id_term: float
    regularizer_term: float
    consistency_term: float
    method_tag: str
    sim_oe_enabled: bool
    beta: float = 1.0
    consistency_weight: float = 0.0
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def decomposition_error(self) -> float:
        recomposed = (self.id_term + self.beta * self.regularizer_term
                      + self.consistency_weight * self.consistency_term)
        return abs(self.total - recomposed)


def _target(target, shape) -> np.ndarray:
    t = np.asarray(target, dtype=np.float64)
    if t.shape != tuple(shape):
        raise ValueError(f"target shape {t.shape} does not match logits {tuple(shape)}")
    if np.any(t < 0) or not np.allclose(t.sum(axis=-1), 1.0, rtol=0, atol=1e-9):
        raise ValueError("target must be a non-negative probability vector per row")
    return t


def _ce_rows(logits: Tensor, target: np.ndarray) -> Tensor:
    """Per-row cross-entropy (scalar for 1-D logits)."""
    return -(log_softmax(logits) * Tensor(target)).sum(axis=-1)


def _mean_if_batch(x: Tensor) -> Tensor:
    return x.mean() if x.ndim == 1 else x


def cross_entropy(logits, target) -> Tensor:
    """-sum_i target_i * log_softmax(logits)_i, mean over rows when batched."""
    z = as_tensor(logits)
    return _mean_if_batch(_ce_rows(z, _target(target, z.shape)))


def batch_risk(logits, targets) -> Tensor:
    z = as_tensor(logits)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError(f"batch_risk needs logits of shape (B, K) with B >= 1, got {z.shape}")
    return cross_entropy(z, targets)


def uniform_like(logits) -> np.ndarray:
    shape = as_tensor(logits).shape
    return np.full(shape, 1.0 / shape[-1])


def mixup_loss(logits_mixed, y_i, y_j, lam) -> Tensor:
    """lam * CE(logits, y_i) + (1 - lam) * CE(logits, y_j)."""
    z = as_tensor(logits_mixed)
    a = _ce_rows(z, _target(y_i, z.shape))
    b = _ce_rows(z, _target(y_j, z.shape))
    if np.ndim(lam) == 0:
        return _mean_if_batch(a * float(lam) + b * (1.0 - float(lam)))
    lam = np.asarray(lam, dtype=np.float64)
    return _mean_if_batch(a * Tensor(lam) + b * Tensor(1.0 - lam))


def _l2_rows(diff: Tensor) -> Tensor:
    return _mean_if_batch(diff.l2_norm(axis=-1))


def logit_mixing_sim_loss(f_xi, f_xj, f_mixed_input, lam_logit) -> Tensor:
    """||(lam f(x_i) + (1 - lam) f(x_j)) - f(x_mixed)||_2."""
    return _l2_rows(mix_logits(f_xi, f_xj, lam_logit) - as_tensor(f_mixed_input))


def logit_mixing_cls_loss(f_xi, f_xj, y_i, y_j) -> Tensor:
    return cross_entropy(f_xi, y_i) + cross_entropy(f_xj, y_j)


def sim_oe_loss(f_in, f_out, f_of_mixed_input, lam) -> Tensor:
    """Distance between logit-space and input-space ID/OOD mixes."""
    return logit_mixing_sim_loss(f_in, f_out, f_of_mixed_input, lam)


def _breakdown(method, id_t: Tensor, reg_t: Tensor | None, beta: float,
               cons_t: Tensor | None = None, cons_w: float = 0.0,
               sim_oe_enabled: bool = False) -> LossBreakdown:
    total = id_t
    if reg_t is not None:
        total = total + reg_t * float(beta)
    if cons_t is not None and cons_w != 0.0:
        total = total + cons_t * float(cons_w)
    return LossBreakdown(
        total=total.item(),
        id_term=id_t.item(),
        regularizer_term=reg_t.item() if reg_t is not None else 0.0,
        consistency_term=cons_t.item() if cons_t is not None else 0.0,
        method_tag=method,
        sim_oe_enabled=sim_oe_enabled,
        beta=float(beta) if reg_t is not None else 0.0,
        consistency_weight=float(cons_w) if cons_t is not None else 0.0,
        tensor=total,
    )


def oe_loss(f_in, y_in, f_out, beta: float) -> LossBreakdown:
    """CE(f_in, y_in) + beta * CE(f_out, U)."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return _breakdown("oe", cross_entropy(f_in, y_in),
                      cross_entropy(f_out, uniform_like(f_out)), beta)


def mixoe_loss(f_in, y_in, f_mixed_input, y_mixed, beta: float) -> LossBreakdown:
    """CE(f_in, y_in) + beta * CE(f(x_mixed), y_mixed)."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return _breakdown("mixoe", cross_entropy(f_in, y_in),
                      cross_entropy(f_mixed_input, y_mixed), beta)


def logit_mixoe_loss(f_in, y_in, f_out, lam, y_mixed, beta: float) -> LossBreakdown:
    """CE(f_in, y_in) + beta * CE(lam f_in + (1 - lam) f_out, y_mixed)."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return _breakdown("logit_mixoe", cross_entropy(f_in, y_in),
                      cross_entropy(mix_logits(f_in, f_out, lam), y_mixed), beta)


def total_loss(
    method_tag: str,
    *,
    f_in,
    y_in,
    f_out=None,
    f_mixed_input=None,
    y_mixed=None,
    lam=None,
    lam_logit=None,
    y_j=None,
    f_mix_in=None,
    f_mix_out=None,
    beta: float = 1.0,
    sim_oe_enabled: bool = False,
    sim_weight: float = 1.0,
) -> LossBreakdown:
    """Assemble one method's objective, optionally adding the consistency loss.

    Keyword roles by method:

    * ``ce_only``: f_in, y_in.
    * ``mixup``: f_mixed_input (logits of the mixed input), y_in and y_j as
      the two source labels, lam.
    * ``logit_mixing``: f_in and f_out are the two ID sources' logits,
      y_in and y_j their labels, f_mixed_input, lam_logit. The cls term is
      the id term, the mixup loss the beta-weighted regularizer and the
      similarity loss the consistency term.
    * ``oe``: f_in, y_in, f_out.
    * ``mixoe``: f_in, y_in, f_mixed_input, y_mixed; with sim_oe also
      f_out and lam_logit.
    * ``logit_mixoe``: f_in, y_in, f_out, lam_logit (falls back to lam),
      y_mixed; with sim_oe also f_mixed_input.

    ``f_mix_in``/``f_mix_out`` override the logits entering the logit-space
    mix (a frozen teacher); they default to f_in/f_out.
    """
    if method_tag not in METHOD_TAGS:
        raise ValueError(f"unknown method_tag {method_tag!r}")
    if sim_oe_enabled and method_tag not in SIM_OE_METHODS:
        raise ValueError(f"sim_oe cannot be combined with method {method_tag!r}")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if lam_logit is None:
        lam_logit = lam
    mix_in = f_in if f_mix_in is None else f_mix_in
    mix_out = f_out if f_mix_out is None else f_mix_out

    if method_tag == "ce_only":
        return _breakdown(method_tag, cross_entropy(f_in, y_in), None, beta)
    if method_tag == "mixup":
        return _breakdown(method_tag, mixup_loss(f_mixed_input, y_in, y_j, lam), None, beta)
    if method_tag == "logit_mixing":
        return _breakdown(
            method_tag,
            logit_mixing_cls_loss(f_in, f_out, y_in, y_j),
            mixup_loss(f_mixed_input, y_in, y_j, lam),
            beta,
            logit_mixing_sim_loss(f_in, f_out, f_mixed_input, lam_logit),
            sim_weight,
        )
    if method_tag == "oe":
        return _breakdown(method_tag, cross_entropy(f_in, y_in),
                          cross_entropy(f_out, uniform_like(f_out)), beta)

    id_t = cross_entropy(f_in, y_in)
    if method_tag == "mixoe":
        reg_t = cross_entropy(f_mixed_input, y_mixed)
    else:
        reg_t = cross_entropy(mix_logits(mix_in, mix_out, lam_logit), y_mixed)
    cons_t = None
    if sim_oe_enabled:
        cons_t = sim_oe_loss(mix_in, mix_out, f_mixed_input, lam_logit)
    return _breakdown(method_tag, id_t, reg_t, beta, cons_t, sim_weight if sim_oe_enabled else 0.0,
                      sim_oe_enabled)

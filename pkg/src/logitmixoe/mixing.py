"""Mixing coefficients and the three interpolation primitives.

``mix_inputs`` interpolates raw inputs, ``mix_label_with_uniform`` pulls a
one-hot label toward the uniform distribution, and ``mix_logits``
interpolates logit vectors while keeping the autodiff graph intact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .tensor import Tensor, as_tensor

LambdaPolicy = Literal["per_batch", "per_sample"]


@dataclass(frozen=True)
class MixSpec:
    alpha: float = 1.0
    beta_weight: float = 1.0
    lambda_policy: LambdaPolicy = "per_batch"
    share_lambda_across_spaces: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta_weight >= 0:
            raise ValueError(f"beta_weight must be >= 0, got {self.beta_weight}")
        if self.lambda_policy not in ("per_batch", "per_sample"):
            raise ValueError(f"unknown lambda_policy {self.lambda_policy!r}")


def _log_gamma_variates(shape: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """log of Gamma(shape, 1) draws via Marsaglia-Tsang.

    For shape < 1 the usual boost is applied: G(a) = G(a + 1) * U**(1/a),
    kept in log space so tiny shapes cannot underflow to zero.
    """
    boost = shape < 1.0
    a = shape + 1.0 if boost else shape
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        n = todo.size
        x = rng.standard_normal(n)
        v = 1.0 + c * x
        u = rng.random(n)
        ok = v > 0.0
        v3 = np.where(ok, v, 1.0) ** 3
        x2 = x * x
        accept = ok & (
            (u < 1.0 - 0.0331 * x2 * x2)
            | (np.log(np.where(u > 0, u, 1e-300)) < 0.5 * x2 + d * (1.0 - v3 + np.log(v3)))
        )
        out[todo[accept]] = np.log(d * v3[accept])
        todo = todo[~accept]
    if boost:
        u = rng.random(size)
        # u == 0 has probability ~2**-53; nudge it off the singularity
        out += np.log(np.maximum(u, np.finfo(float).tiny)) / shape
    return out


def sample_lambdas(alpha: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent draws from Beta(alpha, alpha)."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    lg1 = _log_gamma_variates(alpha, rng, size)
    lg2 = _log_gamma_variates(alpha, rng, size)
    # G1 / (G1 + G2) = 1 / (1 + exp(log G2 - log G1))
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(lg2 - lg1))


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    return float(sample_lambdas(alpha, rng, 1)[0])


def _check_lambda(lam) -> None:
    arr = np.asarray(lam, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")


def _row_weights(lam, shape: tuple[int, ...]) -> np.ndarray | float:
    """Scalar lambda, or a per-row lambda broadcast to ``shape``."""
    if np.ndim(lam) == 0:
        return float(lam)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim != 1 or len(shape) != 2 or lam.shape[0] != shape[0]:
        raise ValueError(f"per-sample lambda of shape {lam.shape} does not fit rows of {shape}")
    return np.broadcast_to(lam[:, None], shape).copy()


def mix_inputs(x_i, x_j, lam):
    """lam * x_i + (1 - lam) * x_j; ``lam`` may be a scalar or one value per row."""
    _check_lambda(lam)
    a = np.asarray(x_i.data if isinstance(x_i, Tensor) else x_i, dtype=np.float64)
    b = np.asarray(x_j.data if isinstance(x_j, Tensor) else x_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mix_inputs: shape mismatch {a.shape} vs {b.shape}")
    w = _row_weights(lam, a.shape)
    return w * a + (1.0 - w) * b


def mix_label_with_uniform(y_in, lam) -> np.ndarray:
    """lam * y_in + (1 - lam) * U for one-hot ``y_in`` (a vector or rows)."""
    _check_lambda(lam)
    y = np.asarray(y_in, dtype=np.float64)
    rows = y.reshape(-1, y.shape[-1])
    if not (np.all((rows == 0.0) | (rows == 1.0)) and np.all(rows.sum(axis=1) == 1.0)):
        raise ValueError("mix_label_with_uniform: y_in must be one-hot")
    k = y.shape[-1]
    w = _row_weights(lam, y.shape)
    return w * y + (1.0 - w) * np.full(y.shape, 1.0 / k)


def mix_logits(f_in, f_out, lam) -> Tensor:
    """lam * f_in + (1 - lam) * f_out, differentiable in both logit tensors."""
    _check_lambda(lam)
    a, b = as_tensor(f_in), as_tensor(f_out)
    if a.shape != b.shape:
        raise ValueError(f"mix_logits: shape mismatch {a.shape} vs {b.shape}")
    w = _row_weights(lam, a.shape)
    if isinstance(w, float):
        return a * w + b * (1.0 - w)
    return a * Tensor(w) + b * Tensor(1.0 - w)


@dataclass
class MixedPair:
    lam: float | np.ndarray
    lam_logit: float | np.ndarray
    mixed_input: np.ndarray
    mixed_label: np.ndarray
    source_in_index: np.ndarray
    source_out_index: np.ndarray


def draw_lambdas(spec: MixSpec, rng: np.random.Generator, batch: int):
    """(lam_input, lam_logit) for one batch under ``spec``'s policy."""
    size = 1 if spec.lambda_policy == "per_batch" else batch
    lam = sample_lambdas(spec.alpha, rng, size)
    lam_logit = lam if spec.share_lambda_across_spaces else sample_lambdas(spec.alpha, rng, size)
    if spec.lambda_policy == "per_batch":
        return float(lam[0]), float(lam_logit[0])
    return lam, lam_logit


def pair_with_outliers(
    spec: MixSpec,
    rng: np.random.Generator,
    x_in: np.ndarray,
    y_in_onehot: np.ndarray,
    in_index: np.ndarray,
    aux: np.ndarray,
) -> tuple[MixedPair, np.ndarray]:
    """Pair an ID batch with aux-OOD rows drawn uniformly with replacement.

    Returns the mixed pair and the raw aux rows that were drawn.
    """
    out_index = rng.integers(0, len(aux), size=len(x_in))
    x_out = aux[out_index]
    lam, lam_logit = draw_lambdas(spec, rng, len(x_in))
    pair = MixedPair(
        lam=lam,
        lam_logit=lam_logit,
        mixed_input=mix_inputs(x_in, x_out, lam),
        mixed_label=mix_label_with_uniform(y_in_onehot, lam),
        source_in_index=in_index,
        source_out_index=out_index,
    )
    return pair, x_out

"""MLP classifier producing raw logits, plus JSON checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor, add_bias, as_tensor, matmul, no_grad, relu

CHECKPOINT_FORMAT = "logitmixoe-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 2
    hidden_dims: tuple[int, ...] = (64, 64)
    num_classes: int = 12
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer."""
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class MlpParams:
    config: MlpConfig
    weights: list[Tensor] = field(default_factory=list)  # each (out_dim, in_dim)
    biases: list[Tensor] = field(default_factory=list)  # each (out_dim,)

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self, requires_grad: bool = True) -> "MlpParams":
        return MlpParams(
            self.config,
            [Tensor(w.data.copy(), requires_grad) for w in self.weights],
            [Tensor(b.data.copy(), requires_grad) for b in self.biases],
        )


def mlp_init(config: MlpConfig) -> MlpParams:
    """Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in config.layer_dims:
        s = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-s, s, size=(fan_out, fan_in)), requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return MlpParams(config, weights, biases)


def forward(params: MlpParams, x_batch) -> Tensor:
    """Logits [B x K] for inputs [B x d]; relu between layers, none after the last."""
    x = as_tensor(x_batch)
    d = params.config.input_dim
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"forward: expected input of shape (B, {d}), got {x.shape}")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = add_bias(matmul(h, w, trans_b=True), b)
        if i < last:
            h = relu(h)
    return h


def predict_logits(params: MlpParams, x) -> np.ndarray:
    with no_grad():
        return forward(params, x).data


def softmax_probs(logits) -> np.ndarray:
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def save_checkpoint(params: MlpParams, path: str | Path) -> None:
    cfg = asdict(params.config)
    cfg["hidden_dims"] = list(cfg["hidden_dims"])
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        # json writes floats with repr(), which round-trips float64 exactly
        "layers": [
            {"shape": list(w.shape), "weight": w.data.ravel().tolist(), "bias": b.data.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> MlpParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: malformed checkpoint ({e})") from e
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        config = MlpConfig(**{**doc["config"], "hidden_dims": tuple(doc["config"]["hidden_dims"])})
        weights, biases = [], []
        for (fan_in, fan_out), layer in zip(config.layer_dims, doc["layers"], strict=True):
            w = np.array(layer["weight"], dtype=np.float64).reshape(fan_out, fan_in)
            b = np.array(layer["bias"], dtype=np.float64).reshape(fan_out)
            weights.append(Tensor(w, requires_grad=True))
            biases.append(Tensor(b, requires_grad=True))
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: bad checkpoint contents ({e})") from e
    return MlpParams(config, weights, biases)

"""Logit diagnostics: L2-norm histograms, 2-D PCA and per-sample responses.

Each result can be written as CSV data plus a small static SVG.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mixing import mix_inputs, mix_logits
from .model import MlpParams, predict_logits
from .tensor import Tensor

RESPONSE_ROLES = ("id", "ood", "input_mixed", "logit_mixed")


def _arr(x) -> np.ndarray:
    a = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    return a.reshape(1, -1) if a.ndim == 1 else a


@dataclass
class HistogramData:
    bin_edges: np.ndarray
    id_counts: np.ndarray
    ood_counts: np.ndarray
    norm_kind: str = "logit_l2"


def logit_norm_histogram(id_logits, ood_logits, num_bins: int = 40) -> HistogramData:
    """Histogram ||f(x)||_2 of both sets over shared uniform bins on [0, max]."""
    if num_bins < 1:
        raise ValueError(f"num_bins must be >= 1, got {num_bins}")
    a, b = _arr(id_logits), _arr(ood_logits)
    if a.size == 0 or b.size == 0:
        raise ValueError("logit_norm_histogram needs non-empty ID and OOD logits")
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    hi = float(max(na.max(), nb.max()))
    if hi <= 0.0:
        hi = 1.0
    edges = np.linspace(0.0, hi, num_bins + 1)
    # np.histogram's last bin is closed on the right
    id_counts, _ = np.histogram(na, bins=edges)
    ood_counts, _ = np.histogram(nb, bins=edges)
    return HistogramData(edges, id_counts.astype(np.int64), ood_counts.astype(np.int64))


@dataclass
class PcaProjection:
    components: np.ndarray  # (2, K), orthonormal rows
    explained_variance: np.ndarray  # (2,), descending
    mean: np.ndarray  # (K,)
    projected_points: np.ndarray  # (n, 2)
    tags: list[str]


def _sign_fix(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def pca_project(id_logits, ood_logits, fit_on: str = "pooled") -> PcaProjection:
    """Top-2 principal axes of the logits; both sets are projected.

    ``fit_on`` is ``"pooled"`` (ID and OOD together) or ``"id"``. Each axis
    is signed so its largest-magnitude entry is positive.
    """
    a, b = _arr(id_logits), _arr(ood_logits)
    pooled = np.concatenate([a, b])
    fit = pooled if fit_on == "pooled" else a if fit_on == "id" else None
    if fit is None:
        raise ValueError(f"fit_on must be 'pooled' or 'id', got {fit_on!r}")
    n, k = fit.shape
    if n < 3 or k < 2:
        raise ValueError(f"pca_project needs >= 3 samples and K >= 2, got {fit.shape}")
    mean = fit.mean(axis=0)
    _, sv, vt = np.linalg.svd(fit - mean, full_matrices=True)
    comps = np.stack([_sign_fix(vt[0]), _sign_fix(vt[1])])
    var = np.zeros(2)
    var[: min(2, len(sv))] = sv[:2] ** 2 / (n - 1)
    # a numerically null second axis is reported as exactly zero variance
    if var[1] <= var[0] * 1e-24:
        var[1] = 0.0
    proj = (pooled - mean) @ comps.T
    return PcaProjection(comps, var, mean, proj, ["id"] * len(a) + ["ood"] * len(b))


@dataclass
class LogitResponses:
    id: np.ndarray
    ood: np.ndarray
    input_mixed: np.ndarray
    logit_mixed: np.ndarray
    lam: float

    def rows(self) -> list[tuple[str, int, float]]:
        out = []
        for role in RESPONSE_ROLES:
            vec = getattr(self, role)
            out += [(role, i, float(v)) for i, v in enumerate(vec)]
        return out


def sample_logit_responses(model: MlpParams, x_in, x_out, lam: float) -> LogitResponses:
    """f(x_in), f(x_out), f(lam x_in + (1-lam) x_out) and lam f(x_in) + (1-lam) f(x_out)."""
    xi = np.asarray(x_in, dtype=np.float64).reshape(1, -1)
    xo = np.asarray(x_out, dtype=np.float64).reshape(1, -1)
    f_in = predict_logits(model, xi)[0]
    f_out = predict_logits(model, xo)[0]
    f_mix_input = predict_logits(model, mix_inputs(xi, xo, lam))[0]
    return LogitResponses(f_in, f_out, f_mix_input, mix_logits(f_in, f_out, lam).data, lam)


# ------------------------------------------------------------------ writers

def write_histogram_csv(h: HistogramData, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "id_count", "ood_count"])
        for i in range(len(h.id_counts)):
            w.writerow([repr(float(h.bin_edges[i])), repr(float(h.bin_edges[i + 1])),
                        int(h.id_counts[i]), int(h.ood_counts[i])])


def write_pca_csv(p: PcaProjection, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tag", "pc1", "pc2"])
        for tag, (u, v) in zip(p.tags, p.projected_points):
            w.writerow([tag, repr(float(u)), repr(float(v))])


def write_responses_csv(r: LogitResponses, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["role", "class_index", "logit_value"])
        for role, i, v in r.rows():
            w.writerow([role, i, repr(v)])


_W, _H, _PAD = 480, 320, 40
_COLORS = {"id": "#1f77b4", "ood": "#d62728", "input_mixed": "#2ca02c", "logit_mixed": "#9467bd"}


def _svg(body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>',
                      f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
                      f'{title}</text>', *body, "</svg>"]) + "\n"


def _axes() -> list[str]:
    return [f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
            f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>']


def histogram_svg(h: HistogramData, title: str = "logit L2 norm") -> str:
    n = len(h.id_counts)
    top = max(int(h.id_counts.max()), int(h.ood_counts.max()), 1)
    bw = (_W - 2 * _PAD) / n
    body = _axes()
    for counts, tag, shift in ((h.id_counts, "id", 0.0), (h.ood_counts, "ood", 0.5)):
        for i, c in enumerate(counts):
            hgt = (_H - 2 * _PAD) * int(c) / top
            x = _PAD + i * bw + shift * bw
            body.append(f'<rect x="{x:.2f}" y="{_H - _PAD - hgt:.2f}" width="{bw / 2:.2f}" '
                        f'height="{hgt:.2f}" fill="{_COLORS[tag]}" fill-opacity="0.7"/>')
    body.append(f'<text x="{_PAD}" y="{_H - 10}" font-size="11">0</text>')
    body.append(f'<text x="{_W - _PAD}" y="{_H - 10}" font-size="11" text-anchor="end">'
                f'{float(h.bin_edges[-1]):.3g}</text>')
    return _svg(body, title)


def pca_svg(p: PcaProjection, title: str = "PCA of logits") -> str:
    pts = p.projected_points
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    body = _axes()
    for tag, (u, v) in zip(p.tags, pts):
        x = _PAD + (u - lo[0]) / span[0] * (_W - 2 * _PAD)
        y = _H - _PAD - (v - lo[1]) / span[1] * (_H - 2 * _PAD)
        body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2" fill="{_COLORS[tag]}" '
                    f'fill-opacity="0.6"/>')
    return _svg(body, title)


def responses_svg(r: LogitResponses, title: str = "per-sample logits") -> str:
    vecs = [getattr(r, role) for role in RESPONSE_ROLES]
    k = len(vecs[0])
    m = max(float(np.abs(np.concatenate(vecs)).max()), 1e-12)
    mid = _H / 2
    slot = (_W - 2 * _PAD) / k
    bw = slot / (len(vecs) + 1)
    body = [f'<line x1="{_PAD}" y1="{mid}" x2="{_W - _PAD}" y2="{mid}" stroke="black"/>']
    for j, (role, vec) in enumerate(zip(RESPONSE_ROLES, vecs)):
        for i, v in enumerate(vec):
            hgt = (mid - _PAD) * abs(float(v)) / m
            y = mid - hgt if v >= 0 else mid
            body.append(f'<rect x="{_PAD + i * slot + j * bw:.2f}" y="{y:.2f}" '
                        f'width="{bw:.2f}" height="{hgt:.2f}" fill="{_COLORS[role]}"/>')
    return _svg(body, title)

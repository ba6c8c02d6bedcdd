"""Synthetic fine-grained datasets with a hold-out-class OOD split.

Class centers are placed hierarchically: coarse groups sit on a large ring,
and each group's classes sit on a small ring around the group center, so
classes within a group are much closer to each other than to other groups.
Some classes per group are held out as near-OOD evaluation data; auxiliary
OOD data is drawn without reference to any held-out class.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

DATASET_FORMAT = "logitmixoe-dataset"
DATASET_VERSION = 1
SPLITS = ("id_train", "id_test", "ood_holdout", "aux_ood", "aux_test")


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed."""


class UnsupportedVersionError(DatasetFormatError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    num_groups: int = 4
    classes_per_group: int = 4
    holdout_per_group: int = 1
    samples_per_class: int = 200
    input_dim: int = 2
    group_separation: float = 10.0
    class_separation: float = 2.0
    noise_std: float = 0.6
    aux_ood_kind: Literal["uniform_box", "far_clusters"] = "uniform_box"
    aux_samples: int = 2000
    box_inflation: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.num_groups < 1 or self.classes_per_group < 1 or self.samples_per_class < 1:
            raise ValueError("num_groups, classes_per_group and samples_per_class must be >= 1")
        if not 0 <= self.holdout_per_group < self.classes_per_group:
            raise ValueError(
                f"holdout_per_group must be in [0, classes_per_group), got "
                f"{self.holdout_per_group} with {self.classes_per_group} classes per group")
        if (self.classes_per_group - self.holdout_per_group) * self.num_groups < 2:
            raise ValueError("at least 2 ID classes must remain")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not 0 < self.class_separation < self.group_separation:
            raise ValueError("need 0 < class_separation < group_separation")
        if not self.noise_std > 0:
            raise ValueError(f"noise_std must be > 0, got {self.noise_std}")
        if self.aux_ood_kind not in ("uniform_box", "far_clusters"):
            raise ValueError(f"unknown aux_ood_kind {self.aux_ood_kind!r}")
        if self.aux_samples < 0:
            raise ValueError("aux_samples must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")

    @property
    def num_id_classes(self) -> int:
        return self.num_groups * (self.classes_per_group - self.holdout_per_group)


@dataclass
class LabeledSet:
    x: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) int

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class IdView:
    """The only part of a bundle that pretraining is allowed to see."""

    train: LabeledSet
    test: LabeledSet
    num_classes: int


@dataclass
class DatasetBundle:
    id_train: LabeledSet
    id_test: LabeledSet
    ood_holdout: np.ndarray
    aux_ood: np.ndarray
    aux_test: np.ndarray
    num_classes: int
    class_centers: np.ndarray  # (num_groups * classes_per_group, d), original class order
    id_class_ids: list[int]  # original class index for each ID label
    holdout_class_ids: list[int]
    provenance: SyntheticSpec = field(default_factory=SyntheticSpec)

    def id_view(self) -> IdView:
        return IdView(self.id_train, self.id_test, self.num_classes)

    @property
    def input_dim(self) -> int:
        return self.id_train.x.shape[1]

    @property
    def id_centers(self) -> np.ndarray:
        return self.class_centers[self.id_class_ids]


def _ring(n: int, chord: float, phase: float, dim: int) -> np.ndarray:
    """n points on a circle (first two axes) with adjacent spacing ``chord``."""
    pts = np.zeros((n, dim))
    if n == 1:
        return pts
    if dim == 1:
        pts[:, 0] = (np.arange(n) - (n - 1) / 2.0) * chord
        return pts
    radius = chord / (2.0 * math.sin(math.pi / n))
    ang = phase + 2.0 * math.pi * np.arange(n) / n
    pts[:, 0] = radius * np.cos(ang)
    pts[:, 1] = radius * np.sin(ang)
    return pts


def class_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    groups = _ring(spec.num_groups, spec.group_separation, 0.0, spec.input_dim)
    out = []
    for g in range(spec.num_groups):
        phase = rng.uniform(0.0, 2.0 * math.pi)
        out.append(groups[g] + _ring(spec.classes_per_group, spec.class_separation, phase,
                                     spec.input_dim))
    return np.concatenate(out)


def _aux_samples(spec: SyntheticSpec, id_x: np.ndarray, centers: np.ndarray, n: int,
                 rng: np.random.Generator) -> np.ndarray:
    if spec.aux_ood_kind == "uniform_box":
        lo, hi = id_x.min(axis=0), id_x.max(axis=0)
        mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0 * spec.box_inflation
        return rng.uniform(mid - half, mid + half, size=(n, spec.input_dim))
    # far_clusters: one cluster per group, beyond the ID region and rotated
    # half a step so each sits between two groups
    g = spec.num_groups
    dirs = np.zeros((g, spec.input_dim))
    if spec.input_dim == 1:
        dirs[:, 0] = np.where(np.arange(g) % 2 == 0, 1.0, -1.0)
    else:
        ang = math.pi / g + 2.0 * math.pi * np.arange(g) / g
        dirs[:, 0], dirs[:, 1] = np.cos(ang), np.sin(ang)
    extent = float(np.linalg.norm(centers, axis=1).max())
    far = dirs * 2.0 * (extent + spec.group_separation)
    which = rng.integers(0, g, size=n)
    return far[which] + rng.normal(0.0, spec.group_separation / 4.0, size=(n, spec.input_dim))


def generate(spec: SyntheticSpec) -> DatasetBundle:
    """Sample a bundle; identical specs give bit-identical bundles."""
    rng = np.random.default_rng(spec.seed)
    centers = class_centers(spec, rng)
    cpg = spec.classes_per_group

    id_class_ids: list[int] = []
    holdout_ids: list[int] = []
    for g in range(spec.num_groups):
        order = rng.permutation(cpg)
        held = set(int(c) for c in order[: spec.holdout_per_group])
        for c in range(cpg):
            (holdout_ids if c in held else id_class_ids).append(g * cpg + c)

    n = spec.samples_per_class
    n_train = int(round(0.8 * n))
    tr_x, tr_y, te_x, te_y, ood = [], [], [], [], []
    for cls in range(len(centers)):
        pts = centers[cls] + rng.normal(0.0, spec.noise_std, size=(n, spec.input_dim))
        if cls in holdout_ids:
            ood.append(pts)
            continue
        label = id_class_ids.index(cls)
        tr_x.append(pts[:n_train])
        te_x.append(pts[n_train:])
        tr_y.append(np.full(n_train, label))
        te_y.append(np.full(n - n_train, label))

    d = spec.input_dim
    id_train = LabeledSet(np.concatenate(tr_x), np.concatenate(tr_y).astype(np.int64))
    id_test = LabeledSet(np.concatenate(te_x).reshape(-1, d),
                         np.concatenate(te_y).astype(np.int64))
    ood_holdout = np.concatenate(ood) if ood else np.zeros((0, d))

    aux = _aux_samples(spec, id_train.x, centers, spec.aux_samples, rng)
    n_aux_train = int(round(0.8 * spec.aux_samples))
    return DatasetBundle(
        id_train=id_train,
        id_test=id_test,
        ood_holdout=ood_holdout,
        aux_ood=aux[:n_aux_train],
        aux_test=aux[n_aux_train:],
        num_classes=len(id_class_ids),
        class_centers=centers,
        id_class_ids=id_class_ids,
        holdout_class_ids=holdout_ids,
        provenance=spec,
    )


def batches(n_or_set, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Yield index arrays partitioning one shuffled epoch; the last batch may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = n_or_set if isinstance(n_or_set, int) else len(n_or_set)
    if n == 0:
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


# ---------------------------------------------------------------- file I/O

def meta_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def save(bundle: DatasetBundle, path: str | Path) -> None:
    """Write ``path`` (CSV rows) plus a ``.meta.json`` sidecar.

    Floats are written with ``repr`` so loading is bit-exact.
    """
    path = Path(path)
    d = bundle.input_dim
    rows = {
        "id_train": (bundle.id_train.x, bundle.id_train.labels),
        "id_test": (bundle.id_test.x, bundle.id_test.labels),
        "ood_holdout": (bundle.ood_holdout, None),
        "aux_ood": (bundle.aux_ood, None),
        "aux_test": (bundle.aux_test, None),
    }
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "label"] + [f"x_{i}" for i in range(d)])
        for split in SPLITS:
            x, labels = rows[split]
            for i in range(len(x)):
                lab = "" if labels is None else str(int(labels[i]))
                w.writerow([split, lab] + [repr(float(v)) for v in x[i]])
    meta = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "spec": asdict(bundle.provenance),
        "num_classes": bundle.num_classes,
        "input_dim": d,
        "counts": {s: int(len(rows[s][0])) for s in SPLITS},
        "class_centers": bundle.class_centers.tolist(),
        "id_class_ids": list(bundle.id_class_ids),
        "holdout_class_ids": list(bundle.holdout_class_ids),
    }
    meta_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def _load_meta(path: Path) -> dict:
    mp = meta_path(path)
    try:
        meta = json.loads(mp.read_text())
    except FileNotFoundError as e:
        raise DatasetFormatError(f"{mp}: metadata sidecar missing") from e
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{mp}: line {e.lineno}: malformed JSON ({e.msg})") from e
    if meta.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"{mp}: field 'format': expected {DATASET_FORMAT!r}")
    if meta.get("version") != DATASET_VERSION:
        raise UnsupportedVersionError(
            f"{mp}: field 'version': unsupported dataset version {meta.get('version')!r} "
            f"(this build reads version {DATASET_VERSION})")
    for key in ("spec", "num_classes", "input_dim", "counts", "class_centers",
                "id_class_ids", "holdout_class_ids"):
        if key not in meta:
            raise DatasetFormatError(f"{mp}: field {key!r} missing")
    return meta


def load(path: str | Path) -> DatasetBundle:
    """Read a bundle written by :func:`save`; any defect raises DatasetFormatError."""
    path = Path(path)
    meta = _load_meta(path)
    d = int(meta["input_dim"])
    k = int(meta["num_classes"])
    header = ["split", "label"] + [f"x_{i}" for i in range(d)]
    xs: dict[str, list] = {s: [] for s in SPLITS}
    ys: dict[str, list] = {s: [] for s in SPLITS}
    try:
        fh = path.open(newline="")
    except OSError as e:
        raise DatasetFormatError(f"{path}: cannot read ({e})") from e
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != header:
            raise DatasetFormatError(f"{path}: line 1: header {first!r} != expected {header!r}")
        for row in reader:
            line = reader.line_num
            if len(row) != d + 2:
                raise DatasetFormatError(
                    f"{path}: line {line}: expected {d + 2} fields, got {len(row)}")
            split, label = row[0], row[1]
            if split not in xs:
                raise DatasetFormatError(f"{path}: line {line}: field 'split': unknown {split!r}")
            labeled = split in ("id_train", "id_test")
            if labeled:
                try:
                    lab = int(label)
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}: line {line}: field 'label': not an integer: {label!r}") from None
                if not 0 <= lab < k:
                    raise DatasetFormatError(
                        f"{path}: line {line}: field 'label': {lab} outside [0, {k})")
                ys[split].append(lab)
            elif label != "":
                raise DatasetFormatError(
                    f"{path}: line {line}: field 'label': OOD rows must be unlabeled")
            vals = []
            for i, v in enumerate(row[2:]):
                try:
                    vals.append(float(v))
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}: line {line}: field 'x_{i}': not a number: {v!r}") from None
            xs[split].append(vals)

    for s in SPLITS:
        want = int(meta["counts"].get(s, -1))
        if len(xs[s]) != want:
            raise DatasetFormatError(
                f"{path}: split {s!r} has {len(xs[s])} rows, metadata says {want} "
                "(truncated or corrupted file)")

    def arr(s):
        return np.array(xs[s], dtype=np.float64).reshape(-1, d)

    try:
        spec = _spec_from_dict(meta["spec"])
    except (TypeError, ValueError) as e:
        raise DatasetFormatError(f"{meta_path(path)}: field 'spec': {e}") from e
    return DatasetBundle(
        id_train=LabeledSet(arr("id_train"), np.array(ys["id_train"], dtype=np.int64)),
        id_test=LabeledSet(arr("id_test"), np.array(ys["id_test"], dtype=np.int64)),
        ood_holdout=arr("ood_holdout"),
        aux_ood=arr("aux_ood"),
        aux_test=arr("aux_test"),
        num_classes=k,
        class_centers=np.array(meta["class_centers"], dtype=np.float64).reshape(-1, d),
        id_class_ids=[int(c) for c in meta["id_class_ids"]],
        holdout_class_ids=[int(c) for c in meta["holdout_class_ids"]],
        provenance=spec,
    )


def _spec_from_dict(raw: dict) -> SyntheticSpec:
    known = {f.name for f in fields(SyntheticSpec)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)}")
    return SyntheticSpec(**raw)


def bundles_equal(a: DatasetBundle, b: DatasetBundle) -> bool:
    """Bit-level equality of every array and all metadata."""
    def same(u, v):
        return u.shape == v.shape and u.dtype == v.dtype and u.tobytes() == v.tobytes()

    return (
        same(a.id_train.x, b.id_train.x) and same(a.id_train.labels, b.id_train.labels)
        and same(a.id_test.x, b.id_test.x) and same(a.id_test.labels, b.id_test.labels)
        and same(a.ood_holdout, b.ood_holdout) and same(a.aux_ood, b.aux_ood)
        and same(a.aux_test, b.aux_test) and same(a.class_centers, b.class_centers)
        and a.num_classes == b.num_classes and a.id_class_ids == b.id_class_ids
        and a.holdout_class_ids == b.holdout_class_ids and a.provenance == b.provenance
    )

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logitmixoe import data
from logitmixoe.data import DatasetFormatError, SyntheticSpec, UnsupportedVersionError


def small(**kw):
    base = dict(num_groups=2, classes_per_group=3, holdout_per_group=1, samples_per_class=50,
                aux_samples=100)
    return SyntheticSpec(**{**base, **kw})


def test_counts():
    b = data.generate(small())
    assert b.num_classes == 4
    assert len(b.ood_holdout) == 100
    assert len(b.id_train) == 4 * 40 and len(b.id_test) == 4 * 10
    assert len(b.aux_ood) == 80 and len(b.aux_test) == 20
    assert sorted(b.id_class_ids + b.holdout_class_ids) == list(range(6))


def test_holdout_is_one_class_per_group():
    b = data.generate(SyntheticSpec(seed=3))
    groups = [c // 4 for c in b.holdout_class_ids]
    assert sorted(groups) == [0, 1, 2, 3]


def test_deterministic():
    assert data.bundles_equal(data.generate(small(seed=5)), data.generate(small(seed=5)))
    assert not data.bundles_equal(data.generate(small(seed=5)), data.generate(small(seed=6)))


def test_noise_free_nearest_center():
    b = data.generate(small(noise_std=1e-12))
    centers = b.id_centers
    d = np.linalg.norm(b.id_test.x[:, None, :] - centers[None], axis=2)
    assert np.mean(np.argmin(d, axis=1) == b.id_test.labels) == 1.0


def test_center_spacing():
    spec = SyntheticSpec()
    c = data.class_centers(spec, np.random.default_rng(0))
    within = np.linalg.norm(c[0] - c[1])
    assert within == pytest.approx(spec.class_separation, rel=1e-12)


@pytest.mark.parametrize("kind", ["uniform_box", "far_clusters"])
def test_aux_kinds(kind):
    b = data.generate(SyntheticSpec(aux_ood_kind=kind))
    assert b.aux_ood.shape == (1600, 2) and b.aux_test.shape == (400, 2)
    if kind == "far_clusters":
        extent = np.linalg.norm(b.class_centers, axis=1).max()
        assert np.median(np.linalg.norm(b.aux_ood, axis=1)) > extent


def test_input_dims():
    for d in (1, 3):
        b = data.generate(small(input_dim=d))
        assert b.input_dim == d and b.aux_ood.shape[1] == d


def test_invalid_specs():
    for kw in ({"holdout_per_group": 3}, {"noise_std": 0.0}, {"class_separation": 20.0},
               {"aux_ood_kind": "gaussian"}, {"num_groups": 0}):
        with pytest.raises(ValueError):
            small(**kw)


def test_batches_partition():
    sizes = [len(b) for b in data.batches(10, 3, np.random.default_rng(0))]
    assert sizes == [3, 3, 3, 1]
    idx = np.concatenate(list(data.batches(10, 3, np.random.default_rng(0))))
    assert sorted(idx) == list(range(10))
    a = [b.tolist() for b in data.batches(10, 3, np.random.default_rng(1))]
    b = [b.tolist() for b in data.batches(10, 3, np.random.default_rng(1))]
    assert a == b
    assert list(data.batches(0, 3, np.random.default_rng(0))) == []


@given(st.integers(1, 200), st.integers(1, 64))
def test_batches_property(n, bs):
    got = list(data.batches(n, bs, np.random.default_rng(n)))
    assert len(got) == -(-n // bs)
    assert np.array_equal(np.sort(np.concatenate(got)), np.arange(n))


def test_one_hot():
    np.testing.assert_array_equal(data.one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])


def test_round_trip(tmp_path):
    b = data.generate(small(seed=11))
    data.save(b, tmp_path / "d.csv")
    assert data.bundles_equal(b, data.load(tmp_path / "d.csv"))


def test_truncated_file(tmp_path):
    data.save(data.generate(small()), tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    (tmp_path / "d.csv").write_text("\n".join(lines[:-7]) + "\n")
    with pytest.raises(DatasetFormatError, match="truncated"):
        data.load(tmp_path / "d.csv")


def test_malformed_row_names_line_and_field(tmp_path):
    data.save(data.generate(small()), tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    lines[4] = lines[4].split(",")[0] + ",0,abc,1.0"
    (tmp_path / "d.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="line 5: field 'x_0'"):
        data.load(tmp_path / "d.csv")


def test_version_mismatch(tmp_path):
    data.save(data.generate(small()), tmp_path / "d.csv")
    mp = data.meta_path(tmp_path / "d.csv")
    meta = json.loads(mp.read_text())
    meta["version"] = 999
    mp.write_text(json.dumps(meta))
    with pytest.raises(UnsupportedVersionError):
        data.load(tmp_path / "d.csv")


def test_missing_sidecar(tmp_path):
    data.save(data.generate(small()), tmp_path / "d.csv")
    data.meta_path(tmp_path / "d.csv").unlink()
    with pytest.raises(DatasetFormatError):
        data.load(tmp_path / "d.csv")

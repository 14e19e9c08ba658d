import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mclsearch.data import (
    LabeledDataset,
    SyntheticSpec,
    load_dataset,
    make_synthetic,
    read_tensor,
    save_dataset,
    stratified_split,
    write_tensor,
)
from mclsearch.tensor import hosvd, multilinear_map


def tiny_dataset(n=2, shape=(8, 8, 3), seed=0):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.random((n,) + shape), np.arange(n) % 2, 2)


class TestContainer:
    def test_layout(self, tmp_path):
        t = np.arange(6.0).reshape(2, 3)
        write_tensor(tmp_path / "t.mclt", t)
        raw = (tmp_path / "t.mclt").read_bytes()
        assert raw[:4] == b"MCLT"
        assert struct.unpack("<IIII", raw[4:20]) == (1, 2, 2, 3)
        assert np.frombuffer(raw[20:], "<f8").tolist() == list(range(6))

    def test_roundtrip(self, tmp_path):
        t = np.random.default_rng(1).standard_normal((3, 4, 2))
        write_tensor(tmp_path / "t.mclt", t)
        assert read_tensor(tmp_path / "t.mclt").tobytes() == t.tobytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.mclt").write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(ValueError, match="magic"):
            read_tensor(tmp_path / "x.mclt")

    def test_truncated_payload(self, tmp_path):
        write_tensor(tmp_path / "t.mclt", np.zeros((2, 2)))
        raw = (tmp_path / "t.mclt").read_bytes()
        (tmp_path / "t.mclt").write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="payload"):
            read_tensor(tmp_path / "t.mclt")


class TestLoad:
    def test_two_samples(self, tmp_path):
        ds = tiny_dataset()
        save_dataset(ds, tmp_path)
        got = load_dataset(tmp_path)
        assert len(got) == 2 and got.shape == (8, 8, 3)
        assert got.samples.tobytes() == ds.samples.tobytes()
        np.testing.assert_array_equal(got.labels, ds.labels)

    def test_manifest_path_accepted(self, tmp_path):
        save_dataset(tiny_dataset(), tmp_path)
        assert len(load_dataset(tmp_path / "manifest.csv")) == 2

    def test_eight_bit_values(self, tmp_path):
        raw = np.random.default_rng(2).integers(0, 256, size=(4, 4, 3)).astype(float)
        raw[0, 0, 0] = 255.0
        write_tensor(tmp_path / "a.mclt", raw)
        (tmp_path / "manifest.csv").write_text("file,label\na.mclt,0\n")
        got = load_dataset(tmp_path).samples[0]
        for v, r in zip(got.ravel(), raw.ravel()):
            assert abs(v - r / 255.0) <= 1e-12

    def test_shape_mismatch_names_file(self, tmp_path):
        write_tensor(tmp_path / "a.mclt", np.zeros((8, 8, 3)))
        write_tensor(tmp_path / "b.mclt", np.zeros((8, 4, 3)))
        (tmp_path / "manifest.csv").write_text("file,label\na.mclt,0\nb.mclt,1\n")
        with pytest.raises(ValueError, match="b.mclt"):
            load_dataset(tmp_path)

    def test_missing_file(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("file,label\nnope.mclt,0\n")
        with pytest.raises(FileNotFoundError, match="nope.mclt"):
            load_dataset(tmp_path)

    @pytest.mark.parametrize("label", ["cat", "-1", "2.5"])
    def test_unknown_label(self, tmp_path, label):
        write_tensor(tmp_path / "a.mclt", np.zeros((2, 2)))
        (tmp_path / "manifest.csv").write_text(f"file,label\na.mclt,{label}\n")
        with pytest.raises(ValueError, match="unknown label"):
            load_dataset(tmp_path)

    def test_label_beyond_class_count(self, tmp_path):
        write_tensor(tmp_path / "a.mclt", np.zeros((2, 2)))
        (tmp_path / "manifest.csv").write_text("file,label\na.mclt,3\n")
        with pytest.raises(ValueError, match="unknown label"):
            load_dataset(tmp_path, class_count=3)

    def test_bad_header(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("path,class\n")
        with pytest.raises(ValueError, match="header"):
            load_dataset(tmp_path)

    def test_save_load_roundtrip_synthetic(self, tmp_path):
        ds = make_synthetic(SyntheticSpec(2, 4, (5, 4, 2), (2, 2, 1), 0.1, seed=3))
        save_dataset(ds, tmp_path)
        got = load_dataset(tmp_path)
        assert got.samples.tobytes() == ds.samples.tobytes()
        np.testing.assert_array_equal(got.labels, ds.labels)


def counts(split, labels, c):
    return tuple(int(np.sum(labels[getattr(split, s)] == c)) for s in ("train", "val", "test"))


class TestSplit:
    def test_ten_per_class(self):
        labels = np.repeat(np.arange(3), 10)
        sp = stratified_split(labels, seed=0)
        for c in range(3):
            assert counts(sp, labels, c) == (6, 2, 2)

    def test_five_in_a_class(self):
        labels = np.array([0] * 5 + [1] * 10)
        assert counts(stratified_split(labels, seed=1), labels, 0) == (3, 1, 1)

    def test_single_class_hundred(self):
        labels = np.zeros(100, dtype=int)
        assert counts(stratified_split(labels), labels, 0) == (60, 20, 20)

    def test_too_few(self):
        with pytest.raises(ValueError, match="class 1"):
            stratified_split(np.array([0, 0, 0, 1, 1]))

    def test_seeded(self):
        labels = np.repeat(np.arange(4), 9)
        a, b = stratified_split(labels, seed=5), stratified_split(labels, seed=5)
        assert all(np.array_equal(a[s], b[s]) for s in ("train", "val", "test"))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(3, 30), min_size=1, max_size=5), st.integers(0, 2**31))
    def test_disjoint_cover_and_proportions(self, sizes, seed):
        labels = np.concatenate([np.full(n, c) for c, n in enumerate(sizes)])
        sp = stratified_split(labels, seed=seed)
        allidx = np.concatenate([sp.train, sp.val, sp.test])
        assert len(allidx) == len(labels) == len(set(allidx.tolist()))
        for c, n in enumerate(sizes):
            tr, va, te = counts(sp, labels, c)
            assert abs(va - 0.2 * n) < 1 and abs(te - 0.2 * n) < 1 and tr >= 1


class TestSynthetic:
    def test_exact_rank_without_noise(self):
        ds = make_synthetic(SyntheticSpec(2, 5, (8, 8, 3), (2, 2, 1), noise=0.0, seed=4))
        for y in ds.samples:
            core, fs = hosvd(y, (2, 2, 1))
            recon = multilinear_map(core, [f.T for f in fs])
            assert np.linalg.norm(recon - y) <= 1e-10 * np.linalg.norm(y)

    def test_dataset_level_rank(self):
        # every sample lives in one shared subspace per mode
        ds = make_synthetic(SyntheticSpec(3, 10, (8, 6, 3), (3, 2, 1), noise=0.0, seed=5))
        for k, r in enumerate((3, 2, 1), start=1):
            u = np.moveaxis(ds.samples, k, 0).reshape(ds.shape[k - 1], -1)
            s = np.linalg.svd(u, compute_uv=False)
            assert s[r:].max(initial=0.0) <= 1e-10 * s[0]

    def test_unit_range(self):
        ds = make_synthetic(SyntheticSpec(3, 20, (8, 8, 3), (3, 3, 2), noise=0.1, seed=6))
        assert ds.samples.min() == 0.0 and ds.samples.max() == 1.0

    def test_deterministic(self):
        spec = SyntheticSpec(2, 6, (6, 6, 2), (2, 2, 1), 0.05, seed=7)
        a, b = make_synthetic(spec), make_synthetic(spec)
        assert a.samples.tobytes() == b.samples.tobytes()
        assert np.array_equal(a.labels, b.labels)

    def test_balanced(self):
        ds = make_synthetic(SyntheticSpec(3, 100, (4, 4, 2), (2, 2, 1), 0.05, seed=8))
        assert len(ds) == 300
        assert np.bincount(ds.labels).tolist() == [100, 100, 100]
        assert ds.split is not None

    def test_rank_exceeds_shape(self):
        with pytest.raises(ValueError, match="rank"):
            SyntheticSpec(shape=(4, 4, 3), rank=(5, 2, 1))

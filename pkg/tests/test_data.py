import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cskd.data import (
    AugPolicy,
    Dataset,
    augment,
    hash_split,
    load_csv,
    load_idx,
    mixup_batch,
    one_hot,
    pad_crop,
    paired_batch,
    save_csv,
    synth_gaussians,
    write_idx,
)
from cskd.errors import DomainError, FormatError


def idx_fixture(tmp_path, n_images=4, n_labels=4):
    images = np.arange(n_images * 4, dtype=np.uint8).reshape(n_images, 2, 2) * 10
    labels = np.arange(n_labels, dtype=np.uint8) % 3
    write_idx(tmp_path / "img.idx", images)
    write_idx(tmp_path / "lab.idx", labels)
    return images, labels


class TestIdx:
    def test_hand_built_bytes(self, tmp_path):
        # magic 0x00000803, dims 2 x 1 x 2, pixels; labels magic 0x00000801, dim 2
        (tmp_path / "i").write_bytes(bytes.fromhex("00000803 00000002 00000001 00000002".replace(" ", "")) + bytes([0, 255, 51, 102]))
        (tmp_path / "l").write_bytes(bytes.fromhex("0000080100000002") + bytes([1, 0]))
        ds = load_idx(tmp_path / "i", tmp_path / "l")
        assert ds.inputs.shape == (2, 1, 1, 2)
        np.testing.assert_allclose(ds.inputs.ravel(), [0, 1, 0.2, 0.4])
        np.testing.assert_array_equal(ds.labels, [1, 0])

    def test_four_image_fixture(self, tmp_path):
        images, labels = idx_fixture(tmp_path)
        ds = load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")
        assert len(ds) == 4 and ds.inputs.shape == (4, 1, 2, 2)
        np.testing.assert_allclose(ds.inputs[:, 0], images / 255.0)
        assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1
        np.testing.assert_array_equal(ds.labels, labels)

    def test_wrong_magic(self, tmp_path):
        idx_fixture(tmp_path)
        with pytest.raises(FormatError, match="magic"):
            load_idx(tmp_path / "lab.idx", tmp_path / "lab.idx")

    def test_count_mismatch(self, tmp_path):
        idx_fixture(tmp_path, n_images=4, n_labels=3)
        with pytest.raises(FormatError, match="count"):
            load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")

    def test_truncated_payload_reports_offset(self, tmp_path):
        idx_fixture(tmp_path)
        blob = (tmp_path / "img.idx").read_bytes()
        (tmp_path / "img.idx").write_bytes(blob[:-3])
        with pytest.raises(FormatError) as info:
            load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")
        assert info.value.offset is not None


class TestCsv:
    def test_roundtrip(self, tmp_path):
        ds = synth_gaussians(3, 4, 2, 0.5, seed=1)
        save_csv(ds, tmp_path / "d.csv")
        back = load_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.inputs, ds.inputs)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "label,f0,f1"

    def test_bad_header(self, tmp_path):
        (tmp_path / "d.csv").write_text("y,a\n0,1.0\n")
        with pytest.raises(FormatError):
            load_csv(tmp_path / "d.csv")


class TestSynth:
    def test_zero_spread(self):
        ds = synth_gaussians(4, 5, 3, 0.0, seed=0)
        for members in ds.class_index:
            assert np.all(ds.inputs[members] == ds.inputs[members[0]])

    def test_reproducible(self):
        a, b = synth_gaussians(8, 10, 2, 0.6, seed=4), synth_gaussians(8, 10, 2, 0.6, seed=4)
        np.testing.assert_array_equal(a.inputs, b.inputs)

    def test_sizes(self):
        ds = synth_gaussians(8, 125, 2, 0.6, seed=0)
        assert len(ds) == 1000
        assert [m.size for m in ds.class_index] == [125] * 8

    def test_centers_on_radius_three(self):
        ds = synth_gaussians(8, 2, 4, 0.0, seed=0)
        np.testing.assert_allclose(np.linalg.norm(ds.inputs, axis=1), 3.0)

    def test_exact_split_sizes(self):
        train, test = hash_split(synth_gaussians(8, 2, 2, 0.6, seed=0, n_samples=1250))
        assert (len(train), len(test)) == (1000, 250)


class TestPairedBatch:
    def test_singleton_class_pairs_with_itself(self):
        ds = Dataset(np.arange(3.0)[:, None], [0, 0, 1], 2)
        pb = paired_batch(ds, [2], np.random.default_rng(0))
        assert pb.partner_indices[0] == 2
        np.testing.assert_array_equal(pb.x_prime, pb.x)

    def test_two_samples_partner_is_the_other(self):
        ds = Dataset(np.array([[1.0], [2.0]]), [0, 0], 1)
        for seed in range(20):
            pb = paired_batch(ds, [0, 1], np.random.default_rng(seed))
            np.testing.assert_array_equal(pb.partner_indices, [1, 0])

    def test_uniform_over_other_members(self):
        ds = Dataset(np.arange(5.0)[:, None], [0] * 5, 1)
        r = np.random.default_rng(0)
        counts = np.zeros(5)
        for _ in range(10_000):
            counts[paired_batch(ds, [2], r).partner_indices[0]] += 1
        freq = counts / counts.sum()
        assert freq[2] == 0
        for j in (0, 1, 3, 4):
            assert 0.15 <= freq[j] <= 0.35

    def test_deterministic_given_seed(self):
        ds = synth_gaussians(4, 10, 2, 0.5, seed=0)
        a = paired_batch(ds, np.arange(20), np.random.default_rng(3))
        b = paired_batch(ds, np.arange(20), np.random.default_rng(3))
        np.testing.assert_array_equal(a.partner_indices, b.partner_indices)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=1, max_size=40), st.integers(0, 2**32 - 1))
    def test_partners_share_label(self, labels, seed):
        ds = Dataset(np.arange(len(labels), dtype=float)[:, None], labels, 5)
        r = np.random.default_rng(seed)
        pb = paired_batch(ds, r.permutation(len(labels)), r)
        np.testing.assert_array_equal(ds.labels[pb.partner_indices], pb.y)
        sizes = np.bincount(labels, minlength=5)
        for i, j in zip(pb.indices, pb.partner_indices):
            assert (i == j) == (sizes[ds.labels[i]] == 1)


class TestAugment:
    def test_disabled_is_identity(self, rng):
        x = rng.uniform(size=(3, 2, 4, 4))
        np.testing.assert_array_equal(augment(x, AugPolicy(0.0, 0), rng), x)

    def test_symmetric_flip_noop(self, rng):
        half = rng.uniform(size=(2, 1, 4, 2))
        x = np.concatenate([half, half[..., ::-1]], axis=-1)
        np.testing.assert_array_equal(augment(x, AugPolicy(1.0, 0), rng), x)

    def test_pad_crop_hand_case(self):
        img = np.arange(1.0, 10.0).reshape(1, 3, 3)
        out = pad_crop(img, 1, 0, 0)
        np.testing.assert_array_equal(out[0], [[0, 0, 0], [0, 1, 2], [0, 4, 5]])

    def test_shape_and_range(self, rng):
        x = rng.uniform(size=(6, 3, 5, 7))
        out = augment(x, AugPolicy(0.5, 2), rng)
        assert out.shape == x.shape
        assert out.min() >= 0 and out.max() <= 1


class TestMixup:
    def test_lambda_one(self, rng):
        x1, x2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        y1, y2 = one_hot([0, 1, 2], 3), one_hot([2, 2, 0], 3)
        xm, ym = mixup_batch(x1, y1, x2, y2, 1.0)
        np.testing.assert_array_equal(xm, x1)
        np.testing.assert_array_equal(ym, y1)

    def test_midpoint_labels(self):
        _, ym = mixup_batch(np.zeros((1, 1)), one_hot([0], 4), np.zeros((1, 1)), one_hot([1], 4), 0.5)
        np.testing.assert_array_equal(ym, [[0.5, 0.5, 0, 0]])

    def test_scalar_inputs(self):
        xm, _ = mixup_batch(np.array([[10.0]]), one_hot([0], 2), np.array([[20.0]]), one_hot([1], 2), 0.3)
        assert xm[0, 0] == pytest.approx(17.0, abs=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            mixup_batch(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), 1.5)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1), st.integers(0, 1000))
    def test_rows_sum_to_one(self, lam, seed):
        r = np.random.default_rng(seed)
        y1, y2 = one_hot(r.integers(0, 5, 8), 5), one_hot(r.integers(0, 5, 8), 5)
        _, ym = mixup_batch(np.zeros((8, 1)), y1, np.zeros((8, 1)), y2, lam)
        np.testing.assert_allclose(ym.sum(axis=1), 1.0, atol=1e-12, rtol=0)

import numpy as np
import pytest

from cskd.errors import DimensionError, FormatError, SpecError
from cskd.gradcheck import grad_check
from cskd.losses import LossConfig, cross_entropy, cskd_loss, softmax_T
from cskd.models import (
    ConvNetSpec,
    MLPSpec,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    snapshot,
)
from cskd.tensor import backward

from .conftest import rebind


class TestInit:
    def test_same_seed_bit_identical(self):
        spec = MLPSpec(5, 3, (7,))
        a, b = init_params(spec, 11), init_params(spec, 11)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a.tensors)

    def test_different_seed_differs(self):
        spec = MLPSpec(5, 3, (7,))
        assert not np.array_equal(init_params(spec, 1)["fc0.weight"].data, init_params(spec, 2)["fc0.weight"].data)

    def test_mnist_mlp_param_count(self):
        assert init_params(MLPSpec(784, 10, (256, 128)), 0).n_params == 235_146

    def test_biases_zero_weights_bounded(self):
        p = init_params(MLPSpec(50, 4, (20,)), 0)
        for name, t in p.tensors.items():
            assert t.requires_grad
            if name.endswith(".bias"):
                np.testing.assert_array_equal(t.data, 0)
        w = p["fc0.weight"].data
        assert np.abs(w).max() <= np.sqrt(6 / 50)

    def test_zero_size_layer(self):
        with pytest.raises(SpecError):
            MLPSpec(4, 3, (0,))
        with pytest.raises(SpecError):
            ConvNetSpec(1, 8, 8, 0)

    def test_convnet_shapes(self):
        p = init_params(ConvNetSpec(1, 8, 8, 5), 0)
        assert p["conv0.weight"].shape == (32, 1, 3, 3)
        assert p["conv1.weight"].shape == (64, 32, 3, 3)
        assert p["fc0.weight"].shape == (64 * 2 * 2, 128)
        assert p["fc1.weight"].shape == (128, 5)


class TestForward:
    def test_zero_params_give_uniform_softmax(self):
        p = init_params(MLPSpec(3, 4, (5,)), 0)
        for t in p.tensors.values():
            t.data[:] = 0
        out = forward(p, np.ones((2, 3)))
        np.testing.assert_array_equal(out.logits.data, 0)
        np.testing.assert_allclose(softmax_T(out.logits, 1.0).data, 0.25, rtol=0, atol=1e-15)

    def test_batch_independence(self, rng):
        p = init_params(MLPSpec(3, 4, (6, 5)), 2)
        x = rng.normal(size=(8, 3))
        full = forward(p, x).logits.data
        single = forward(p, x[4:5]).logits.data
        np.testing.assert_allclose(single[0], full[4], rtol=1e-14, atol=1e-15)

    def test_hand_computed_mlp(self):
        # 2 -> 4 -> 3 with hand-set weights, input [1, 0]
        p = init_params(MLPSpec(2, 3, (4,)), 0)
        p["fc0.weight"].data[:] = [[1.0, -1.0, 2.0, 0.5], [3.0, 3.0, 3.0, 3.0]]
        p["fc0.bias"].data[:] = [0.0, 0.5, -1.0, 0.0]
        p["fc1.weight"].data[:] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
        p["fc1.bias"].data[:] = [0.1, 0.2, 0.3]
        out = forward(p, np.array([[1.0, 0.0]]))
        # hidden pre-activation [1, -0.5, 1, 0.5] -> relu [1, 0, 1, 0.5]
        np.testing.assert_allclose(out.penultimate.data, [[1.0, 0.0, 1.0, 0.5]])
        np.testing.assert_allclose(out.logits.data, [[1.6, 0.7, 1.8]])

    def test_penultimate_feeds_last_layer(self, rng):
        p = init_params(MLPSpec(3, 4, (6, 5)), 2)
        out = forward(p, rng.normal(size=(4, 3)))
        recomputed = out.penultimate.data @ p["fc2.weight"].data + p["fc2.bias"].data
        np.testing.assert_array_equal(recomputed, out.logits.data)
        assert out.penultimate.shape == (4, 5)

    def test_input_mismatch(self):
        with pytest.raises(DimensionError):
            forward(init_params(MLPSpec(3, 2, (4,)), 0), np.ones((2, 4)))
        with pytest.raises(DimensionError):
            forward(init_params(ConvNetSpec(1, 8, 8, 3), 0), np.ones((2, 2, 8, 8)))

    def test_convnet_forward(self, rng):
        p = init_params(ConvNetSpec(1, 8, 6, 3, channels=(4, 5), fc=7), 0)
        out = forward(p, rng.uniform(size=(2, 1, 8, 6)))
        assert out.logits.shape == (2, 3) and out.penultimate.shape == (2, 7)


class TestSnapshot:
    def test_frozen_copy(self, rng):
        p = init_params(MLPSpec(3, 4, (5,)), 1)
        s = snapshot(p)
        assert s.frozen and not p.frozen
        x = rng.normal(size=(3, 3))
        np.testing.assert_array_equal(forward(s, x).logits.data, forward(p, x).logits.data)

    def test_mutating_original_does_not_leak(self, rng):
        p = init_params(MLPSpec(3, 4, (5,)), 1)
        s = snapshot(p)
        x = rng.normal(size=(3, 3))
        before = forward(s, x).logits.data.copy()
        for t in p.tensors.values():
            t.data += 1.0
        np.testing.assert_array_equal(forward(s, x).logits.data, before)

    def test_loss_through_frozen_only_leaves_grads_zero(self, rng):
        p = init_params(MLPSpec(3, 4, (5,)), 1)
        s = snapshot(p)
        backward(cross_entropy(forward(s, rng.normal(size=(3, 3))).logits, [0, 1, 2]))
        for t in p.tensors.values():
            np.testing.assert_array_equal(t.grad, 0)


def test_model_loss_grad_check(small_mlp, rng):
    x = rng.normal(size=(5, 3))
    y = rng.integers(0, 4, 5)
    frozen = forward(snapshot(small_mlp), rng.normal(size=(5, 3))).logits
    cfg = LossConfig(kind="cskd", T=4.0, lambda_cls=2.0)

    def f(*tensors):
        return cskd_loss(forward(rebind(small_mlp, tensors), x).logits, frozen, y, cfg).total

    assert grad_check(f, list(small_mlp.tensors.values())) < 1e-5


def test_convnet_grad_check(rng):
    p = init_params(ConvNetSpec(1, 4, 4, 3, channels=(2, 3), fc=4), 3)
    for name, t in p.tensors.items():
        if name.endswith(".bias"):
            t.data[:] = 0.2
    x = rng.uniform(size=(2, 1, 4, 4))

    def f(*tensors):
        return cross_entropy(forward(rebind(p, tensors), x).logits, [0, 2])

    assert grad_check(f, list(p.tensors.values())) < 1e-4


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        p = init_params(ConvNetSpec(1, 8, 8, 3, channels=(2, 3), fc=4), 5)
        save_checkpoint(p, tmp_path / "m.bin")
        q = load_checkpoint(tmp_path / "m.bin")
        assert q.spec == p.spec and q.frozen
        assert list(q.tensors) == list(p.tensors)
        assert all(np.array_equal(q[k].data, p[k].data) for k in p.tensors)

    def test_layout(self, tmp_path):
        import struct

        p = init_params(MLPSpec(2, 2, (1,)), 0)
        save_checkpoint(p, tmp_path / "m.bin")
        blob = (tmp_path / "m.bin").read_bytes()
        assert blob[:8] == b"CSKDPAR1"
        version, spec_len = struct.unpack("<II", blob[8:16])
        assert version == 1
        pos = 16 + spec_len
        (name_len,) = struct.unpack("<I", blob[pos : pos + 4])
        assert blob[pos + 4 : pos + 4 + name_len] == b"fc0.weight"
        pos += 4 + name_len
        rank, d0, d1 = struct.unpack("<III", blob[pos : pos + 12])
        assert (rank, d0, d1) == (2, 2, 1)
        payload = np.frombuffer(blob[pos + 12 : pos + 28], dtype="<f8")
        np.testing.assert_array_equal(payload, p["fc0.weight"].data.ravel())

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"NOTACKPT" + b"\0" * 16)
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "x.bin")

    def test_truncated(self, tmp_path):
        p = init_params(MLPSpec(2, 2, (3,)), 0)
        save_checkpoint(p, tmp_path / "m.bin")
        blob = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(blob[:-5])
        with pytest.raises(FormatError, match="offset"):
            load_checkpoint(tmp_path / "t.bin")

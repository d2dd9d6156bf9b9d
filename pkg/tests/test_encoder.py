import numpy as np
import pytest

from descry.core import Image, Rng
from descry.encoder import (
    CheckpointFormatError,
    EncoderParams,
    _upsample_matrix,
    backward,
    checkpoint_size,
    forward,
    init,
    layer_shapes,
    load_checkpoint,
    save_checkpoint,
)
from tests.conftest import noise_image
from tests.gradcheck import fd_param_errors, kink_free, linear_readout


class TestInit:
    def test_layer_shapes(self):
        shapes = layer_shapes(16)
        assert shapes == [(3, 3, 3, 16), (3, 3, 16, 32), (3, 3, 32, 32), (1, 1, 32, 16)]

    def test_deterministic(self):
        a = init(8, Rng(1))
        b = init(8, Rng(1))
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_biases_start_at_zero(self):
        p = init(8, Rng(0))
        for b in p.biases:
            assert (b == 0).all()

    def test_glorot_bound_respected(self):
        p = init(8, Rng(2))
        for w, (kh, kw, cin, cout) in zip(p.weights, layer_shapes(8)):
            a = np.sqrt(6.0 / (kh * kw * cin + kh * kw * cout))
            assert np.abs(w).max() <= a

    def test_tiny_dim_rejected(self):
        with pytest.raises(ValueError):
            init(1, Rng(0))


class TestForward:
    def test_output_shape_matches_input(self):
        p = init(8, Rng(0))
        desc, _ = forward(p, noise_image(32, 24))
        assert desc.data.shape == (24, 32, 8)
        assert (desc.height, desc.width, desc.dim) == (24, 32, 8)

    def test_descriptors_are_unit_norm(self):
        p = init(8, Rng(1))
        desc, _ = forward(p, noise_image(16, 16))
        norms = np.linalg.norm(desc.data, axis=2)
        assert np.abs(norms - 1.0).max() < 1e-4

    def test_indivisible_size_rejected(self):
        p = init(8, Rng(0))
        with pytest.raises(ValueError, match="divisible"):
            forward(p, Image(np.zeros((30, 32, 3))))

    def test_deterministic(self):
        p = init(8, Rng(2))
        img = noise_image(16, 16, seed=3)
        a, _ = forward(p, img)
        b, _ = forward(p, img)
        assert np.array_equal(a.data, b.data)

    def test_at_accessor(self):
        p = init(8, Rng(3))
        desc, _ = forward(p, noise_image(16, 16))
        assert np.array_equal(desc.at(5, 9), desc.data[9, 5])

    def test_dtype_follows_parameters(self):
        img = noise_image(16, 16, seed=5)
        assert forward(init(8, Rng(4)), img)[0].data.dtype == np.float32
        assert forward(init(8, Rng(4)).astype(np.float64), img)[0].data.dtype == np.float64


class TestUpsampleMatrix:
    def test_rows_sum_to_one(self):
        m = _upsample_matrix(8, 4, np.float64)
        assert np.allclose(m.sum(axis=1), 1.0)

    def test_shape(self):
        assert _upsample_matrix(8, 4, np.float64).shape == (32, 8)

    def test_constant_signal_preserved(self):
        m = _upsample_matrix(6, 4, np.float64)
        assert np.allclose(m @ np.ones(6), 1.0)

    def test_linear_ramp_preserved_in_interior(self):
        m = _upsample_matrix(8, 4, np.float64)
        x = np.arange(8, dtype=np.float64)
        y = m @ x
        fine = (np.arange(32) + 0.5) / 4 - 0.5
        interior = (fine >= 0) & (fine <= 7)
        assert np.allclose(y[interior], fine[interior], atol=1e-12)


class TestBackward:
    def test_gradient_matches_finite_differences(self):
        img = Image(np.random.Generator(np.random.PCG64(0)).uniform(0, 1, (8, 8, 3)).astype(np.float32))
        params = kink_free(init(3, Rng(0)).astype(np.float64), img)
        g = np.random.Generator(np.random.PCG64(1))
        pixels = np.stack([g.integers(0, 8, 8), g.integers(0, 8, 8)], axis=1)
        coeffs = g.normal(size=(8, 3))
        _, analytic = linear_readout(params, img, pixels, coeffs)
        worst = fd_param_errors(
            params, lambda p: linear_readout(p, img, pixels, coeffs)[0], analytic, h=1e-3
        )
        assert worst < 1e-4

    def test_gradient_zero_outside_touched_receptive_fields(self):
        img = noise_image(16, 16, seed=1)
        params = init(4, Rng(5)).astype(np.float64)
        _, cache = forward(params, img)
        pixels = np.array([[8, 8]])
        grads = np.ones((1, 4))
        dws, dbs = backward(params, cache, pixels, grads)
        # last layer bias gradient exists; shapes all match parameters
        for dw, w in zip(dws, params.weights):
            assert dw.shape == w.shape
        for db, b in zip(dbs, params.biases):
            assert db.shape == b.shape

    def test_duplicate_pixels_accumulate(self):
        img = noise_image(16, 16, seed=2)
        params = init(4, Rng(6)).astype(np.float64)
        _, cache = forward(params, img)
        g = np.ones((1, 4))
        dws1, _ = backward(params, cache, np.array([[3, 3]]), g)
        dws2, _ = backward(params, cache, np.array([[3, 3], [3, 3]]), np.vstack([g, g]))
        for a, b in zip(dws1, dws2):
            assert np.allclose(2 * a, b, atol=1e-12)


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path):
        p = init(16, Rng(7))
        save_checkpoint(p, tmp_path / "m.ckpt")
        q = load_checkpoint(tmp_path / "m.ckpt")
        assert q.dim == 16
        for a, b in zip(p.arrays(), q.arrays()):
            assert np.array_equal(a, b)

    def test_file_size_is_exact(self, tmp_path):
        p = init(16, Rng(8))
        save_checkpoint(p, tmp_path / "m.ckpt")
        assert (tmp_path / "m.ckpt").stat().st_size == checkpoint_size(16)

    def test_bad_magic_rejected(self, tmp_path):
        f = tmp_path / "x.ckpt"
        f.write_bytes(b"NOPE" + b"\x00" * 100)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(f)

    def test_truncation_rejected(self, tmp_path):
        p = init(8, Rng(9))
        save_checkpoint(p, tmp_path / "m.ckpt")
        data = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(data[:-10])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            load_checkpoint(tmp_path / "t.ckpt")

    def test_trailing_bytes_rejected(self, tmp_path):
        p = init(8, Rng(9))
        save_checkpoint(p, tmp_path / "m.ckpt")
        data = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(data + b"\x00\x00")
        with pytest.raises(CheckpointFormatError, match="trailing"):
            load_checkpoint(tmp_path / "t.ckpt")

    def test_copy_is_deep(self):
        p = init(4, Rng(10))
        q = p.copy()
        q.weights[0][0, 0, 0, 0] += 1.0
        assert p.weights[0][0, 0, 0, 0] != q.weights[0][0, 0, 0, 0]

import itertools

import numpy as np
import pytest

from fknet.errors import RangeError, ShapeError
from fknet.tensor import argmax_last, crop, hflip, matmul, new_filled

from oracles import matmul_triple_loop


class TestNewFilled:
    def test_zeros(self):
        t = new_filled([2, 3], 0.0)
        assert t.shape == (2, 3)
        assert t.dtype == np.float32
        assert np.all(t == 0.0)

    def test_single_element(self):
        t = new_filled([1], 7.5)
        assert t.shape == (1,)
        assert t[0] == np.float32(7.5)

    def test_conv1_output_buffer(self):
        t = new_filled([96, 55, 55], 0.0)
        assert t.size == 290400

    @pytest.mark.parametrize("shape", [[0, 3], [2, -1], []])
    def test_bad_extents_rejected(self, shape):
        with pytest.raises(ShapeError):
            new_filled(shape, 1.0)

    def test_row_major_round_trip(self):
        rng = np.random.default_rng(3)
        for shape in [(4,), (3, 5), (2, 3, 4), (2, 3, 2, 2)]:
            t = new_filled(shape, 0.0)
            values = rng.normal(size=shape).astype(np.float32)
            for idx in itertools.product(*(range(s) for s in shape)):
                t[idx] = values[idx]
            # row-major: last index fastest
            flat = t.ravel(order="C")
            for k, idx in enumerate(itertools.product(*(range(s) for s in shape))):
                assert flat[k] == values[idx]


class TestMatmul:
    def test_identity(self):
        x = np.array([[1.5, -2.0], [0.25, 4.0]], dtype=np.float32)
        eye = np.eye(2, dtype=np.float32)
        assert np.array_equal(matmul(eye, x), x)
        assert np.array_equal(matmul(x, eye), x)

    def test_hand_arithmetic(self):
        a = np.array([[1, 2], [3, 4]], dtype=np.float32)
        b = np.array([[5], [6]], dtype=np.float32)
        assert np.array_equal(matmul(a, b), np.array([[17], [39]], dtype=np.float32))

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        for m, k, n in [(7, 9, 5), (64, 64, 64), (1, 13, 3)]:
            a = rng.uniform(-1, 1, (m, k)).astype(np.float32)
            b = rng.uniform(-1, 1, (k, n)).astype(np.float32)
            expected = matmul_triple_loop(a, b)
            assert np.max(np.abs(matmul(a, b) - expected)) < 1e-5

    def test_mismatched_inner_extents(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros((2, 3), np.float32), np.zeros((4, 2), np.float32))

    def test_rank_checked(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros(3, np.float32), np.zeros((3, 2), np.float32))


class TestArgmaxLast:
    def test_simple(self):
        assert argmax_last(np.array([0.1, 0.7, 0.2], np.float32)) == 1

    def test_tie_breaks_low(self):
        assert argmax_last(np.full(5, 2.5, np.float32)) == 0

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(11)
        t = rng.normal(size=(2, 10)).astype(np.float32)
        got = argmax_last(t)
        for row in range(2):
            best, best_i = -np.inf, 0
            for i, v in enumerate(t[row]):
                if v > best:
                    best, best_i = v, i
            assert got[row] == best_i


class TestHflip:
    def test_width_one_fixed_point(self):
        t = np.arange(6, dtype=np.float32).reshape(2, 3, 1)
        assert np.array_equal(hflip(t), t)

    def test_involution_bitwise(self):
        rng = np.random.default_rng(13)
        t = rng.normal(size=(3, 4, 5)).astype(np.float32)
        assert np.array_equal(hflip(hflip(t)), t)

    def test_reverses_rows(self):
        t = np.array([1, 2, 3], dtype=np.float32).reshape(1, 1, 3)
        assert np.array_equal(hflip(t), np.array([3, 2, 1], np.float32).reshape(1, 1, 3))

    def test_rank_checked(self):
        with pytest.raises(ShapeError):
            hflip(np.zeros((2, 2), np.float32))


class TestCrop:
    def test_full_window_is_identity(self):
        rng = np.random.default_rng(17)
        t = rng.normal(size=(3, 5, 5)).astype(np.float32)
        assert np.array_equal(crop(t, 0, 0, 5, 5), t)

    def test_227_window(self):
        t = np.zeros((3, 256, 256), np.float32)
        assert crop(t, 0, 0, 227, 227).shape == (3, 227, 227)

    def test_bottom_right_window(self):
        t = np.arange(9, dtype=np.float32).reshape(1, 3, 3)
        got = crop(t, 1, 1, 2, 2)
        assert np.array_equal(got, np.array([[[4, 5], [7, 8]]], np.float32))

    @pytest.mark.parametrize("args", [(-1, 0, 2, 2), (0, 2, 2, 2), (2, 0, 2, 2)])
    def test_out_of_bounds(self, args):
        t = np.zeros((1, 3, 3), np.float32)
        with pytest.raises(RangeError):
            crop(t, *args)

    def test_result_contiguous(self):
        t = np.arange(27, dtype=np.float32).reshape(3, 3, 3)
        assert crop(t, 0, 1, 2, 2).flags["C_CONTIGUOUS"]

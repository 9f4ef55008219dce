import numpy as np
import pytest

from fknet.augment import (
    CropPlan,
    center_crop,
    channel_means,
    gray_to_rgb,
    mean_subtract,
    plan_for,
    random_train_crop,
    resize_bilinear,
)
from fknet.augment import test_crops as tta_crops
from fknet.data import Sample
from fknet.errors import ConfigError, ShapeError
from fknet.tensor import hflip

from oracles import bilinear_scalar


class TestGrayToRgb:
    def test_replicates_channels_bitwise(self):
        rng = np.random.default_rng(0)
        img = rng.random((1, 28, 28)).astype(np.float32)
        out = gray_to_rgb(img)
        assert out.shape == (3, 28, 28)
        for c in range(3):
            assert np.array_equal(out[c], img[0])

    def test_constant(self):
        out = gray_to_rgb(np.full((1, 4, 4), 0.25, np.float32))
        assert np.all(out == np.float32(0.25))

    def test_channel_mean_recovers_original(self):
        rng = np.random.default_rng(1)
        img = rng.random((1, 5, 5)).astype(np.float32)
        out = gray_to_rgb(img)
        assert np.array_equal(out.mean(axis=0, dtype=np.float64).astype(np.float32), img[0])

    def test_rejects_multichannel(self):
        with pytest.raises(ShapeError):
            gray_to_rgb(np.zeros((3, 4, 4), np.float32))


class TestResizeBilinear:
    def test_same_size_identity(self):
        rng = np.random.default_rng(2)
        img = rng.random((3, 9, 9)).astype(np.float32)
        out = resize_bilinear(img, 9, 9)
        assert np.max(np.abs(out - img)) < 1e-6

    def test_constant_any_size(self):
        img = np.full((2, 3, 5), 0.7, np.float32)
        for oh, ow in [(7, 7), (2, 9), (256, 256)]:
            out = resize_bilinear(img, oh, ow)
            assert np.max(np.abs(out - np.float32(0.7))) < 1e-6

    def test_checkerboard_matches_scalar_reference(self):
        img = np.array([[[0.0, 1.0], [1.0, 0.0]]], dtype=np.float32)
        out = resize_bilinear(img, 4, 4)
        expected = bilinear_scalar(img, 4, 4)
        assert np.max(np.abs(out - expected)) < 1e-6

    def test_random_matches_scalar_reference(self):
        rng = np.random.default_rng(3)
        img = rng.random((3, 5, 7)).astype(np.float32)
        for oh, ow in [(8, 8), (3, 4), (11, 2)]:
            out = resize_bilinear(img, oh, ow)
            expected = bilinear_scalar(img, oh, ow)
            assert np.max(np.abs(out - expected)) < 1e-6

    def test_upsample_28_to_256(self):
        rng = np.random.default_rng(4)
        img = rng.random((3, 28, 28)).astype(np.float32)
        out = resize_bilinear(img, 256, 256)
        assert out.shape == (3, 256, 256)
        assert out.min() >= img.min() - 1e-6 and out.max() <= img.max() + 1e-6


class TestRandomTrainCrop:
    def test_identity_when_sizes_match(self):
        plan = CropPlan(28, 28, False)
        rng = np.random.default_rng(5)
        img = rng.random((3, 28, 28)).astype(np.float32)
        assert np.array_equal(random_train_crop(img, plan, rng), img)

    def test_reproducible_offsets(self):
        plan = CropPlan(32, 28, True)
        img = np.arange(3 * 32 * 32, dtype=np.float32).reshape(3, 32, 32)
        a = [random_train_crop(img, plan, np.random.default_rng(6)) for _ in range(5)]
        b = [random_train_crop(img, plan, np.random.default_rng(6)) for _ in range(5)]
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_offsets_cover_grid_uniformly(self):
        # chi-square uniformity over all (S-T+1)^2 = 36 positions
        plan = CropPlan(8, 3, False)
        img = np.arange(8 * 8, dtype=np.float32).reshape(1, 8, 8)
        rng = np.random.default_rng(7)
        counts = np.zeros((6, 6))
        draws = 14400
        for _ in range(draws):
            c = random_train_crop(img, plan, rng)
            top, left = int(c[0, 0, 0]) // 8, int(c[0, 0, 0]) % 8
            counts[top, left] += 1
        expected = draws / 36
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        from scipy.stats import chi2 as chi2_dist

        assert chi2 < chi2_dist.ppf(0.99, 35)

    def test_source_size_enforced(self):
        plan = CropPlan(32, 28, True)
        with pytest.raises(ShapeError):
            random_train_crop(np.zeros((3, 28, 28), np.float32), plan, np.random.default_rng(0))

    def test_target_larger_than_source_rejected(self):
        with pytest.raises(ConfigError):
            CropPlan(27, 28, False)


class TestTestCrops:
    def test_ten_crops_with_mirror(self):
        img = np.random.default_rng(8).random((3, 32, 32)).astype(np.float32)
        crops = tta_crops(img, CropPlan(32, 28, mirror_test=True))
        assert len(crops) == 10
        assert all(c.shape == (3, 28, 28) for c in crops)

    def test_five_crops_without_mirror(self):
        img = np.random.default_rng(9).random((3, 32, 32)).astype(np.float32)
        crops = tta_crops(img, CropPlan(32, 28, mirror_test=False))
        assert len(crops) == 5

    def test_corner_then_center_order(self):
        img = np.arange(6 * 6, dtype=np.float32).reshape(1, 6, 6)
        crops = tta_crops(img, CropPlan(6, 4, mirror_test=False))
        assert crops[0][0, 0, 0] == img[0, 0, 0]  # top-left
        assert crops[1][0, 0, -1] == img[0, 0, -1]  # top-right
        assert crops[2][0, -1, 0] == img[0, -1, 0]  # bottom-left
        assert crops[3][0, -1, -1] == img[0, -1, -1]  # bottom-right
        assert crops[4][0, 0, 0] == img[0, 1, 1]  # center offset floor(2/2)

    def test_mirrored_pairs_exact(self):
        img = np.random.default_rng(10).random((3, 34, 34)).astype(np.float32)
        crops = tta_crops(img, CropPlan(34, 28, mirror_test=True))
        for i in range(5):
            assert np.array_equal(crops[i + 5], hflip(crops[i]))

    def test_degenerate_equals_input(self):
        img = np.random.default_rng(11).random((3, 28, 28)).astype(np.float32)
        crops = tta_crops(img, CropPlan(28, 28, mirror_test=False))
        assert len(crops) == 5
        for c in crops:
            assert np.array_equal(c, img)

    def test_deterministic_bitwise(self):
        img = np.random.default_rng(12).random((3, 32, 32)).astype(np.float32)
        plan = CropPlan(32, 28, mirror_test=True)
        a = tta_crops(img, plan)
        b = tta_crops(img, plan)
        for x, y in zip(a, b):
            assert x.tobytes() == y.tobytes()


class TestMeanSubtract:
    def test_zero_mean_identity(self):
        img = np.random.default_rng(13).random((3, 4, 4)).astype(np.float32)
        assert np.array_equal(mean_subtract(img, np.zeros(3, np.float32)), img)

    def test_constant_minus_itself(self):
        img = np.full((2, 3, 3), 0.4, np.float32)
        out = mean_subtract(img, np.array([0.4, 0.4], np.float32))
        assert np.all(out == 0)

    def test_split_mean_recenters(self):
        rng = np.random.default_rng(14)
        samples = [Sample(rng.random((3, 8, 8)).astype(np.float32), 0) for _ in range(50)]
        mean = channel_means(samples)
        shifted = [mean_subtract(s.image, mean) for s in samples]
        remeaned = channel_means([Sample(im, 0) for im in shifted])
        assert np.max(np.abs(remeaned)) < 1e-5

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            mean_subtract(np.zeros((3, 2, 2), np.float32), np.zeros(2, np.float32))


class TestPlanFor:
    def test_reference_plans(self):
        assert plan_for("mnist", "reference") == CropPlan(256, 227, False)
        assert plan_for("cifar100", "reference") == CropPlan(256, 227, True)

    def test_desk_plans(self):
        assert plan_for("mnist", "desk") == CropPlan(28, 28, False)
        assert plan_for("cifar10", "desk") == CropPlan(32, 28, True)

    def test_crop_count_law(self):
        plan = plan_for("cifar100", "reference")
        assert (plan.source_size - plan.target_size + 1) ** 2 == 900

    def test_center_crop_offset(self):
        img = np.arange(5 * 5, dtype=np.float32).reshape(1, 5, 5)
        out = center_crop(img, CropPlan(5, 3, False))
        assert out[0, 0, 0] == img[0, 1, 1]

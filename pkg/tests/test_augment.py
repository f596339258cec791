import numpy as np
import pytest

from stormchip.augment import (AugmentConfig, affine_matrix, apply_affine, augment_batch,
                               random_affine)


def identity_config():
    return AugmentConfig(rotation_deg_max=0.0, horizontal_flip=False, shift_frac_max=0.0,
                         shear_frac_max=0.0, zoom_frac_max=0.0, enabled=True)


class TestConfigValidation:
    def test_negative_magnitude_rejected(self):
        with pytest.raises(ValueError):
            AugmentConfig(rotation_deg_max=-1.0)

    def test_fraction_at_one_rejected(self):
        with pytest.raises(ValueError):
            AugmentConfig(shift_frac_max=1.0)


class TestAffine:
    def test_identity_parameters_give_identity_matrix(self):
        m = affine_matrix(7, 9)
        assert np.array_equal(m, np.eye(3))
        assert np.array_equal(affine_matrix(7, 9, inverse=True), np.eye(3))

    def test_identity_config_is_bitwise_identity(self):
        img = np.random.default_rng(0).random((3, 9, 9), dtype=np.float32)
        out = random_affine(img, identity_config(), np.random.default_rng(1))
        assert np.array_equal(out, img)

    def test_forced_flip_twice_restores_image(self):
        img = np.random.default_rng(2).random((3, 8, 11), dtype=np.float32)
        inv = affine_matrix(8, 11, flip=True, inverse=True)
        once = apply_affine(img, inv)
        twice = apply_affine(once, inv)
        assert np.array_equal(twice, img)
        assert not np.array_equal(once, img)

    def test_flip_reverses_columns_exactly(self):
        img = np.arange(12, dtype=np.float64).reshape(1, 3, 4)
        out = apply_affine(img, affine_matrix(3, 4, flip=True, inverse=True))
        assert np.array_equal(out, img[:, :, ::-1])

    def test_rotation_90_moves_bright_pixel_to_expected_place(self):
        h = w = 15
        img = np.zeros((1, h, w), dtype=np.float64)
        r, c = 3, 11
        img[0, r, c] = 1.0
        fwd = affine_matrix(h, w, rotation_deg=90.0)
        dst = fwd @ np.array([r, c, 1.0])
        out = apply_affine(img, affine_matrix(h, w, rotation_deg=90.0, inverse=True))
        br, bc = np.unravel_index(np.argmax(out[0]), out[0].shape)
        assert abs(br - dst[0]) <= 1.0
        assert abs(bc - dst[1]) <= 1.0
        assert out.max() > 0.5

    def test_shift_moves_content(self):
        img = np.zeros((1, 9, 9))
        img[0, 4, 4] = 1.0
        inv = affine_matrix(9, 9, shift=(2.0, -1.0), inverse=True)
        out = apply_affine(img, inv)
        assert out[0, 6, 3] == pytest.approx(1.0)

    def test_values_stay_within_input_range(self):
        rng = np.random.default_rng(3)
        cfg = AugmentConfig()  # default magnitudes, everything on
        for seed in range(10):
            img = rng.random((3, 12, 12), dtype=np.float32) * 0.5 + 0.25
            out = random_affine(img, cfg, np.random.default_rng(seed))
            assert out.min() >= img.min() - 1e-6
            assert out.max() <= img.max() + 1e-6

    def test_deterministic_under_fixed_stream(self):
        img = np.random.default_rng(4).random((3, 10, 10), dtype=np.float32)
        cfg = AugmentConfig()
        a = random_affine(img, cfg, np.random.default_rng(99))
        b = random_affine(img, cfg, np.random.default_rng(99))
        assert np.array_equal(a, b)


class TestAugmentBatch:
    def test_disabled_config_is_bitwise_passthrough(self):
        batch = np.random.default_rng(5).random((6, 3, 8, 8), dtype=np.float32)
        cfg = AugmentConfig(enabled=False)
        out = augment_batch(batch, cfg, np.random.default_rng(0))
        assert out is batch

    def test_shape_and_labels_untouched(self):
        batch = np.random.default_rng(6).random((5, 3, 11, 11), dtype=np.float32)
        out = augment_batch(batch, AugmentConfig(), np.random.default_rng(1))
        assert out.shape == batch.shape
        assert out.dtype == batch.dtype

    def test_samples_drawn_independently(self):
        batch = np.stack([np.random.default_rng(7).random((3, 10, 10), dtype=np.float32)] * 2)
        out = augment_batch(batch, AugmentConfig(), np.random.default_rng(2))
        # same source image, different draws
        assert not np.array_equal(out[0], out[1])

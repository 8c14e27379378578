"""Ingestion, augmentation and synthetic data generation."""

import numpy as np
import pytest
from PIL import Image

from lesionseg.data import (AugmentConfig, IMAGENET_MEAN, IMAGENET_STD,
                            IngestionError, SegSample, augment,
                            denormalize_rgb, derive_rng, load_isic_dir,
                            load_sample, normalize_rgb, scan_isic_dir,
                            synth_dataset)
from lesionseg.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1357)


def _write_pair(tmp_path, stem="ISIC_0000001", size=(64, 48), gray=128,
                mask_value=255, mask_suffix="_segmentation"):
    img = Image.new("RGB", size, (gray, gray, gray))
    img_path = tmp_path / f"{stem}.jpg"
    img.save(img_path, quality=100)
    mask = Image.new("L", size, mask_value)
    mask_path = tmp_path / f"{stem}{mask_suffix}.png"
    mask.save(mask_path)
    return img_path, mask_path


class TestLoadSample:
    def test_midgray_normalization(self, tmp_path):
        img_path, mask_path = _write_pair(tmp_path, gray=128)
        sample = load_sample(img_path, mask_path)
        assert sample.image.shape == (3, 192, 256)
        expect = (128 / 255 - IMAGENET_MEAN) / IMAGENET_STD
        got = sample.image.data.mean(axis=(1, 2))
        assert np.abs(got - expect).max() < 1e-3
        assert abs(got[0] - 0.0741) < 1e-3

    def test_white_mask_is_all_ones(self, tmp_path):
        img_path, mask_path = _write_pair(tmp_path, mask_value=255)
        sample = load_sample(img_path, mask_path)
        assert np.array_equal(sample.mask.data,
                              np.ones((1, 192, 256)))

    def test_target_sized_input_only_normalizes(self, tmp_path, rng):
        arr = rng.integers(0, 256, size=(192, 256, 3), dtype=np.uint8)
        img_path = tmp_path / "exact.png"
        Image.fromarray(arr).save(img_path)
        mask_path = tmp_path / "exact_segmentation.png"
        Image.fromarray(np.full((192, 256), 200, dtype=np.uint8)).save(mask_path)
        sample = load_sample(img_path, mask_path)
        expect = normalize_rgb(arr.astype(np.float64) / 255.0)
        assert np.array_equal(sample.image.data, expect)

    def test_mask_values_exactly_binary(self, tmp_path, rng):
        arr = rng.integers(0, 256, size=(30, 40), dtype=np.uint8)
        img_path = tmp_path / "a.png"
        Image.fromarray(rng.integers(0, 256, size=(30, 40, 3),
                                     dtype=np.uint8)).save(img_path)
        mask_path = tmp_path / "a_segmentation.png"
        Image.fromarray(arr).save(mask_path)
        sample = load_sample(img_path, mask_path)
        assert set(np.unique(sample.mask.data)) <= {0.0, 1.0}

    def test_unreadable_file_raises_with_path(self, tmp_path):
        bogus = tmp_path / "broken.png"
        bogus.write_bytes(b"not a png")
        img_path, mask_path = _write_pair(tmp_path)
        with pytest.raises(IngestionError, match="broken.png"):
            load_sample(bogus, mask_path)

    def test_mismatched_pair_rejected(self, tmp_path):
        img_path, _ = _write_pair(tmp_path, size=(64, 48))
        other_mask = tmp_path / "other_segmentation.png"
        Image.new("L", (32, 32), 255).save(other_mask)
        with pytest.raises(IngestionError, match="is"):
            load_sample(img_path, other_mask)


def _random_sample(rng, hw=(32, 32)):
    h, w = hw
    rgb = rng.random((h, w, 3))
    mask = (rng.random((h, w)) > 0.5).astype(np.float64)
    return SegSample(image=Tensor(normalize_rgb(rgb)),
                     mask=Tensor(mask[None]), id="t")


class TestAugment:
    def test_zero_probabilities_and_strengths_are_identity(self, rng):
        cfg = AugmentConfig(p_affine=0.0, brightness=0.0, contrast=0.0,
                            saturation=0.0, hue=0.0, p_hflip=0.0, p_vflip=0.0)
        sample = _random_sample(rng)
        out = augment(sample, cfg, derive_rng(1, "a"))
        assert np.array_equal(out.image.data, sample.image.data)
        assert np.array_equal(out.mask.data, sample.mask.data)

    def test_hflip_twice_restores_bitwise(self, rng):
        cfg = AugmentConfig(p_affine=0.0, brightness=0.0, contrast=0.0,
                            saturation=0.0, hue=0.0, p_hflip=1.0, p_vflip=0.0)
        sample = _random_sample(rng)
        once = augment(sample, cfg, derive_rng(2, "b"))
        twice = augment(once, cfg, derive_rng(2, "b"))
        assert np.array_equal(twice.image.data, sample.image.data)
        assert np.array_equal(twice.mask.data, sample.mask.data)
        assert not np.array_equal(once.image.data, sample.image.data)

    def test_fixed_stream_reproduces_bitwise(self, rng):
        cfg = AugmentConfig()
        sample = _random_sample(rng)
        a = augment(sample, cfg, derive_rng(7, "stream", 3))
        b = augment(sample, cfg, derive_rng(7, "stream", 3))
        assert np.array_equal(a.image.data, b.image.data)
        assert np.array_equal(a.mask.data, b.mask.data)

    def test_shapes_never_change(self, rng):
        cfg = AugmentConfig(p_affine=1.0, p_hflip=1.0, p_vflip=1.0)
        sample = _random_sample(rng, hw=(48, 64))
        for i in range(5):
            out = augment(sample, cfg, derive_rng(0, i))
            assert out.image.shape == sample.image.shape
            assert out.mask.shape == sample.mask.shape

    def test_masks_stay_binary_under_affine(self, rng):
        cfg = AugmentConfig(p_affine=1.0)
        sample = _random_sample(rng, hw=(48, 48))
        for i in range(5):
            out = augment(sample, cfg, derive_rng(3, i))
            assert set(np.unique(out.mask.data)) <= {0.0, 1.0}

    def test_translation_fills_with_raw_black(self, rng):
        # all-ones image shifted right: new left columns decode to RGB zero
        ones = SegSample(image=Tensor(normalize_rgb(np.ones((16, 16, 3)))),
                         mask=Tensor(np.ones((1, 16, 16))), id="ones")
        cfg = AugmentConfig(p_affine=1.0, shift_limit=0.25, scale_limit=0.0,
                            rotate_limit=0.0, brightness=0.0, contrast=0.0,
                            saturation=0.0, hue=0.0, p_hflip=0.0, p_vflip=0.0)
        moved = False
        for i in range(8):
            out = augment(ones, cfg, derive_rng(11, i))
            rgb = denormalize_rgb(out.image.data)
            border = rgb.min(axis=-1) < 1e-12
            inside = rgb.max(axis=-1) > 1.0 - 1e-12
            assert border.sum() + inside.sum() >= 16 * 16 - 64
            moved |= border.any()
        assert moved


class TestIsicDir:
    def _populate(self, tmp_path):
        imgs = tmp_path / "images"
        masks = tmp_path / "masks"
        imgs.mkdir()
        masks.mkdir()
        for stem in ("ISIC_002", "ISIC_001", "ISIC_003"):
            Image.new("RGB", (32, 32), (90, 60, 50)).save(imgs / f"{stem}.jpg")
        for stem in ("ISIC_001", "ISIC_002"):
            Image.new("L", (32, 32), 255).save(
                masks / f"{stem}_segmentation.png")
        Image.new("L", (32, 32), 255).save(masks / "ISIC_999_segmentation.png")
        return imgs, masks

    def test_pairs_and_skip_report(self, tmp_path):
        imgs, masks = self._populate(tmp_path)
        pairs, skipped = scan_isic_dir(imgs, masks)
        assert [stem for _, _, stem in pairs] == ["ISIC_001", "ISIC_002"]
        assert any("ISIC_003" in s for s in skipped)
        assert any("ISIC_999" in s for s in skipped)

    def test_load_returns_samples_in_stable_order(self, tmp_path):
        imgs, masks = self._populate(tmp_path)
        first = load_isic_dir(imgs, masks)
        second = load_isic_dir(imgs, masks)
        assert [s.id for s in first] == [s.id for s in second] \
            == ["ISIC_001", "ISIC_002"]


class TestSynthDataset:
    def test_empty(self):
        assert synth_dataset(0, seed=1) == []

    def test_deterministic_bitwise(self):
        a = synth_dataset(4, seed=9)
        b = synth_dataset(4, seed=9)
        for sa, sb in zip(a, b):
            assert sa.id == sb.id
            assert np.array_equal(sa.image.data, sb.image.data)
            assert np.array_equal(sa.mask.data, sb.mask.data)

    def test_masks_binary_and_nonempty(self):
        for s in synth_dataset(6, seed=4):
            values = set(np.unique(s.mask.data))
            assert values == {0.0, 1.0}

    def test_area_contract_over_many_samples(self):
        total = 192 * 256
        for s in synth_dataset(1000, seed=123):
            frac = s.mask.data.sum() / total
            assert 0.02 <= frac <= 0.60

    def test_images_finite(self):
        for s in synth_dataset(4, seed=2):
            assert np.isfinite(s.image.data).all()


def test_derive_rng_streams_are_independent_and_stable():
    a = derive_rng(5, "x", 1).random(4)
    b = derive_rng(5, "x", 1).random(4)
    c = derive_rng(5, "x", 2).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    d = derive_rng(5, "sample-id").random(2)
    e = derive_rng(5, "sample-id").random(2)
    assert np.array_equal(d, e)

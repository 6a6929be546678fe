import numpy as np
import pytest

from scribformer.data import (
    UNLABELED,
    Sample,
    augment,
    load_dataset,
    normalize_intensity,
    resize_sample,
    write_dataset,
    write_info,
)
from scribformer.data import DatasetInfo
from scribformer.errors import ConfigError, DatasetError, ValidationError


class NoOpRng:
    """Generator stand-in that never fires a random transform."""

    def random(self):
        return 1.0

    def integers(self, *a, **k):
        return 0

    def normal(self, loc, scale, size=None):
        return np.zeros(size, dtype=np.float32)


class ScriptedRng(NoOpRng):
    """Feeds a fixed sequence of random() draws (draw order: hflip, vflip, rot, noise)."""

    def __init__(self, draws):
        self.draws = list(draws)

    def random(self):
        return self.draws.pop(0) if self.draws else 1.0


def _sample(size=64, seed=0) -> Sample:
    rng = np.random.default_rng(seed)
    img = rng.random((size, size), dtype=np.float32)
    scrib = np.full((size, size), UNLABELED, dtype=np.uint8)
    scrib[10:14, 20] = 1
    scrib[30, 5:40] = 0
    scrib[40:42, 40:44] = 2
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[8:20, 16:26] = 1
    mask[38:46, 38:48] = 2
    return Sample(image=img, scribble=scrib, dense_mask=mask, id="t0")


class TestNormalize:
    def test_constant_array_maps_to_zero(self):
        out = normalize_intensity(np.full((4, 4), 7.0))
        assert np.all(out == 0.0)

    def test_unit_range_is_identity(self):
        arr = np.array([0.0, 0.25, 0.5, 1.0], dtype=np.float32)
        assert np.array_equal(normalize_intensity(arr), arr)

    def test_minmax_formula(self):
        out = normalize_intensity(np.array([2.0, 4.0, 6.0]))
        assert np.allclose(out, [0.0, 0.5, 1.0])

    def test_idempotent(self):
        arr = np.random.default_rng(3).normal(size=(32, 32)) * 10
        once = normalize_intensity(arr)
        twice = normalize_intensity(once)
        assert np.abs(once - twice).max() <= 1e-12

    def test_rejects_non_finite(self):
        bad = np.array([1.0, np.nan])
        with pytest.raises(ValidationError):
            normalize_intensity(bad)
        with pytest.raises(ValidationError):
            normalize_intensity(np.array([np.inf, 0.0]))


class TestResize:
    def test_same_size_is_identity(self):
        s = _sample()
        out = resize_sample(s, 64)
        assert out is s

    def test_label_set_closure(self):
        s = _sample()
        s.scribble[s.scribble == 1] = 2  # label set {0, 2, 255}
        out = resize_sample(s, 128)
        assert set(np.unique(out.scribble)) <= {0, 2, UNLABELED}

    def test_disk_area_ratio_preserved(self):
        size = 128
        yy, xx = np.mgrid[0:size, 0:size]
        disk = ((yy - 64) ** 2 + (xx - 64) ** 2 <= 30**2).astype(np.uint8)
        s = Sample(
            image=disk.astype(np.float32), scribble=np.full((size, size), UNLABELED, np.uint8),
            dense_mask=disk, id="disk",
        )
        out = resize_sample(s, 256)
        ratio_before = disk.mean()
        ratio_after = (out.dense_mask == 1).mean()
        assert abs(ratio_after - ratio_before) / ratio_before < 0.02

    def test_bad_size_rejected(self):
        with pytest.raises(ConfigError):
            resize_sample(_sample(), 100)
        with pytest.raises(ConfigError):
            resize_sample(_sample(), 16)


class TestAugment:
    def test_noop_rng_keeps_sample(self):
        s = _sample()
        out = augment(s, NoOpRng())
        assert np.array_equal(out.image, s.image)
        assert np.array_equal(out.scribble, s.scribble)
        assert np.array_equal(out.dense_mask, s.dense_mask)

    def test_hflip_is_involution(self):
        s = _sample()
        hflip_only = [0.0, 1.0, 1.0, 1.0]
        once = augment(s, ScriptedRng(hflip_only))
        assert not np.array_equal(once.image, s.image)
        twice = augment(once, ScriptedRng(hflip_only))
        assert np.array_equal(twice.image, s.image)
        assert np.array_equal(twice.scribble, s.scribble)
        assert np.array_equal(twice.dense_mask, s.dense_mask)

    def test_vflip_is_involution(self):
        s = _sample()
        vflip_only = [1.0, 0.0, 1.0, 1.0]
        twice = augment(augment(s, ScriptedRng(vflip_only)), ScriptedRng(vflip_only))
        assert np.array_equal(twice.image, s.image)
        assert np.array_equal(twice.scribble, s.scribble)

    def test_labeled_count_and_multiset_preserved(self):
        s = _sample()
        before = np.sort(s.scribble[s.scribble != UNLABELED])
        for seed in range(20):
            out = augment(s, np.random.default_rng(seed))
            after = np.sort(out.scribble[out.scribble != UNLABELED])
            assert np.array_equal(before, after)

    def test_noise_never_touches_labels(self):
        s = _sample()
        for seed in range(20):
            rng = np.random.default_rng(seed)
            out = augment(s, rng)
            assert out.scribble.dtype == np.uint8
            assert set(np.unique(out.scribble)) <= {0, 1, 2, UNLABELED}
            assert out.image.min() >= 0.0 and out.image.max() <= 1.0


class TestSampleValidation:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            Sample(image=np.zeros((4, 4), np.float32), scribble=np.zeros((4, 5), np.uint8))

    def test_mask_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            Sample(
                image=np.zeros((4, 4), np.float32),
                scribble=np.zeros((4, 4), np.uint8),
                dense_mask=np.zeros((5, 5), np.uint8),
            )


class TestLoadDataset:
    def test_empty_split_gives_empty_list(self, tmp_path):
        write_info(tmp_path, DatasetInfo(num_classes=3, image_size=64))
        assert load_dataset(tmp_path, "val") == []

    def test_missing_scribble_is_hard_error(self, tmp_path):
        s = _sample()
        write_info(tmp_path, DatasetInfo(num_classes=3, image_size=64))
        write_dataset(tmp_path, "train", [s])
        (tmp_path / "train" / "scribbles" / "t0.png").unlink()
        with pytest.raises(DatasetError, match="t0"):
            load_dataset(tmp_path, "train")

    def test_shape_mismatch_is_hard_error(self, tmp_path):
        import cv2

        s = _sample()
        write_info(tmp_path, DatasetInfo(num_classes=3, image_size=64))
        write_dataset(tmp_path, "train", [s])
        small = np.full((32, 32), UNLABELED, np.uint8)
        cv2.imwrite(str(tmp_path / "train" / "scribbles" / "t0.png"), small)
        with pytest.raises(DatasetError, match="t0"):
            load_dataset(tmp_path, "train")

    def test_label_above_k_rejected(self, tmp_path):
        s = _sample()
        s.scribble[0, 0] = 7
        write_info(tmp_path, DatasetInfo(num_classes=3, image_size=64))
        write_dataset(tmp_path, "train", [s])
        with pytest.raises(DatasetError, match="t0"):
            load_dataset(tmp_path, "train")

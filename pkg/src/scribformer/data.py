"""Loading, normalization, resizing and augmentation of scribble-annotated 2D samples.

On-disk layout::

    <root>/dataset.json                      num_classes, class_names, image_size
    <root>/<split>/images/<id>.png           8- or 16-bit grayscale
    <root>/<split>/scribbles/<id>.png        8-bit class indices, 255 = unlabeled
    <root>/<split>/masks/<id>.png            optional dense ground truth

Images are min-max normalized to [0, 1]; label maps keep integer class ids
with 255 as the unlabeled sentinel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np

from .errors import ConfigError, DatasetError, ValidationError

UNLABELED = 255

# Encoder downsamples by 32 overall, so sides must be multiples of this.
SIZE_MULTIPLE = 32


def normalize_intensity(raw: np.ndarray) -> np.ndarray:
    """Min-max rescale an intensity array to [0, 1].

    A constant array maps to all zeros. Non-finite input is rejected.
    """
    raw = np.asarray(raw, dtype=np.float32)
    if not np.isfinite(raw).all():
        raise ValidationError("image contains non-finite values")
    lo = float(raw.min())
    hi = float(raw.max())
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


@dataclass
class Sample:
    """One 2D grayscale image with its sparse scribble annotation.

    ``dense_mask`` carries full ground truth and is used for evaluation only.
    """

    image: np.ndarray
    scribble: np.ndarray
    dense_mask: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.scribble = np.asarray(self.scribble, dtype=np.uint8)
        if self.image.ndim != 2 or self.scribble.ndim != 2:
            raise ValidationError(f"sample {self.id!r}: image and scribble must be 2D")
        if self.image.shape != self.scribble.shape:
            raise ValidationError(
                f"sample {self.id!r}: image {self.image.shape} and scribble "
                f"{self.scribble.shape} shapes differ"
            )
        if self.dense_mask is not None:
            self.dense_mask = np.asarray(self.dense_mask, dtype=np.uint8)
            if self.dense_mask.shape != self.image.shape:
                raise ValidationError(
                    f"sample {self.id!r}: dense_mask shape {self.dense_mask.shape} "
                    f"does not match image {self.image.shape}"
                )

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape

    def labeled_fraction(self) -> float:
        return float((self.scribble != UNLABELED).mean())


def _check_size(size: int) -> None:
    if size < SIZE_MULTIPLE or size % SIZE_MULTIPLE != 0:
        raise ConfigError(
            f"image size {size} must be a multiple of {SIZE_MULTIPLE} (and >= {SIZE_MULTIPLE})"
        )


def resize_sample(sample: Sample, size: int) -> Sample:
    """Resize to ``size`` x ``size``: bilinear for the image, nearest for labels."""
    _check_size(size)
    if sample.shape == (size, size):
        return sample
    image = cv2.resize(sample.image, (size, size), interpolation=cv2.INTER_LINEAR)
    scribble = cv2.resize(sample.scribble, (size, size), interpolation=cv2.INTER_NEAREST)
    mask = None
    if sample.dense_mask is not None:
        mask = cv2.resize(sample.dense_mask, (size, size), interpolation=cv2.INTER_NEAREST)
    return Sample(image=image, scribble=scribble, dense_mask=mask, id=sample.id)


def _apply_spatial(arr: np.ndarray, hflip: bool, vflip: bool, k90: int) -> np.ndarray:
    if hflip:
        arr = arr[:, ::-1]
    if vflip:
        arr = arr[::-1, :]
    if k90:
        arr = np.rot90(arr, k90)
    return np.ascontiguousarray(arr)


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random flips, 90-degree rotations and additive image noise.

    Each transform fires with independent probability 0.5. Spatial transforms
    are applied identically to image, scribble and dense mask; the Gaussian
    noise (sigma 0.02, clamped to [0, 1]) touches the image only.
    """
    hflip = rng.random() < 0.5
    vflip = rng.random() < 0.5
    k90 = int(rng.integers(1, 4)) if rng.random() < 0.5 else 0
    add_noise = rng.random() < 0.5

    image = _apply_spatial(sample.image, hflip, vflip, k90)
    scribble = _apply_spatial(sample.scribble, hflip, vflip, k90)
    mask = None
    if sample.dense_mask is not None:
        mask = _apply_spatial(sample.dense_mask, hflip, vflip, k90)
    if add_noise:
        noise = rng.normal(0.0, 0.02, size=image.shape).astype(np.float32)
        image = np.clip(image + noise, 0.0, 1.0)
    return Sample(image=image, scribble=scribble, dense_mask=mask, id=sample.id)


@dataclass
class DatasetInfo:
    """Contents of dataset.json."""

    num_classes: int
    image_size: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.class_names:
            self.class_names = [f"class{k}" for k in range(self.num_classes)]
        if len(self.class_names) != self.num_classes:
            raise ConfigError("class_names length does not match num_classes")

    def to_json(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "image_size": self.image_size,
            "class_names": self.class_names,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetInfo":
        return cls(
            num_classes=int(d["num_classes"]),
            image_size=int(d["image_size"]),
            class_names=list(d.get("class_names", [])),
        )


def read_info(root: str | Path) -> DatasetInfo:
    path = Path(root) / "dataset.json"
    if not path.is_file():
        raise DatasetError(f"missing dataset.json under {root}")
    return DatasetInfo.from_json(json.loads(path.read_text()))


def _read_gray(path: Path) -> np.ndarray:
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise DatasetError(f"cannot read image file {path}")
    if arr.ndim == 3:
        arr = cv2.cvtColor(arr, cv2.COLOR_BGR2GRAY)
    return arr


def load_dataset(root: str | Path, split: str, size: int | None = None) -> list[Sample]:
    """Load one split, normalized and resized to the configured size.

    ``size`` defaults to the image_size recorded in dataset.json. Missing
    scribble files and shape mismatches are hard errors naming the sample id.
    """
    root = Path(root)
    info = read_info(root)
    size = info.image_size if size is None else size
    _check_size(size)

    image_dir = root / split / "images"
    if not image_dir.is_dir():
        return []
    samples = []
    for img_path in sorted(image_dir.glob("*.png")):
        sid = img_path.stem
        scrib_path = root / split / "scribbles" / f"{sid}.png"
        if not scrib_path.is_file():
            raise DatasetError(f"sample {sid!r}: missing scribble file {scrib_path}")
        image = normalize_intensity(_read_gray(img_path).astype(np.float32))
        scribble = _read_gray(scrib_path).astype(np.uint8)
        if image.shape != scribble.shape:
            raise DatasetError(
                f"sample {sid!r}: image shape {image.shape} does not match "
                f"scribble shape {scribble.shape}"
            )
        bad = scribble[(scribble != UNLABELED) & (scribble >= info.num_classes)]
        if bad.size:
            raise DatasetError(
                f"sample {sid!r}: scribble contains class {int(bad[0])} "
                f">= num_classes {info.num_classes}"
            )
        mask = None
        mask_path = root / split / "masks" / f"{sid}.png"
        if mask_path.is_file():
            mask = _read_gray(mask_path).astype(np.uint8)
            if mask.shape != image.shape:
                raise DatasetError(f"sample {sid!r}: dense mask shape mismatch")
        sample = Sample(image=image, scribble=scribble, dense_mask=mask, id=sid)
        samples.append(resize_sample(sample, size))
    return samples


def write_dataset(root: str | Path, split: str, samples: list[Sample]) -> None:
    """Write samples in the on-disk layout (16-bit images, 8-bit label maps)."""
    root = Path(root)
    for sub in ("images", "scribbles", "masks"):
        (root / split / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        # scale in float64: float32 roundoff would shift grid values by one
        img16 = np.round(np.clip(s.image.astype(np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
        cv2.imwrite(str(root / split / "images" / f"{s.id}.png"), img16)
        cv2.imwrite(str(root / split / "scribbles" / f"{s.id}.png"), s.scribble)
        if s.dense_mask is not None:
            cv2.imwrite(str(root / split / "masks" / f"{s.id}.png"), s.dense_mask)


def write_info(root: str | Path, info: DatasetInfo) -> None:
    Path(root).mkdir(parents=True, exist_ok=True)
    (Path(root) / "dataset.json").write_text(json.dumps(info.to_json(), indent=2))

"""Static rendering of activation-map heatmaps, prediction overlays and box plots."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import cv2
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ValidationError  # noqa: E402

HEATMAP_CMAP = "jet"

# distinct overlay colors for up to 8 foreground classes (RGB)
_CLASS_COLORS = np.array(
    [
        (230, 60, 60),
        (60, 160, 230),
        (90, 200, 90),
        (235, 200, 50),
        (180, 90, 210),
        (240, 140, 60),
        (100, 220, 210),
        (230, 120, 170),
    ],
    dtype=np.float32,
)


def _to_uint8_gray(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def _write_rgb(path: Path, rgb: np.ndarray) -> None:
    cv2.imwrite(str(path), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))


def colormap_rgb(values01: np.ndarray) -> np.ndarray:
    """Map [0,1] values through the heatmap colormap to uint8 RGB."""
    rgba = matplotlib.colormaps[HEATMAP_CMAP](values01, bytes=True)
    return rgba[..., :3]


def render_acam_heatmaps(
    acam_probs: Sequence[np.ndarray],
    image: np.ndarray,
    out_dir: str | Path,
) -> list[Path]:
    """One colormapped PNG per (stage, class) at input resolution, plus the input.

    ``acam_probs`` holds the five filtered (values in (0,1)) per-stage maps of
    shape (K, h, w). Each map is normalized to its own range, upsampled with
    nearest-neighbour so the hottest cell keeps its exact value, and written
    as ``stage<i>_class<k>.png``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = image.shape
    written: list[Path] = []
    for stage, maps in enumerate(acam_probs, start=1):
        maps = np.asarray(maps, dtype=np.float64)
        if maps.ndim != 3:
            raise ValidationError(f"stage {stage}: expected (K, h, w) map, got {maps.shape}")
        for k in range(maps.shape[0]):
            m = maps[k]
            rng = m.max() - m.min()
            norm = (m - m.min()) / rng if rng > 0 else np.zeros_like(m)
            up = cv2.resize(norm, (w, h), interpolation=cv2.INTER_NEAREST)
            path = out_dir / f"stage{stage}_class{k}.png"
            _write_rgb(path, colormap_rgb(up))
            written.append(path)
    _write_rgb(out_dir / "input.png", np.repeat(_to_uint8_gray(image)[..., None], 3, axis=-1))
    return written


def overlay_prediction(
    image: np.ndarray, mask: np.ndarray, path: str | Path, alpha: float = 0.45
) -> Path:
    """Blend class colors over the grayscale image; background stays untinted."""
    if image.shape != mask.shape:
        raise ValidationError(f"image {image.shape} and mask {mask.shape} shapes differ")
    base = np.repeat(_to_uint8_gray(image)[..., None].astype(np.float32), 3, axis=-1)
    for k in sorted(int(v) for v in np.unique(mask) if v > 0):
        color = _CLASS_COLORS[(k - 1) % len(_CLASS_COLORS)]
        sel = mask == k
        base[sel] = (1 - alpha) * base[sel] + alpha * color
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_rgb(path, base.round().astype(np.uint8))
    return path


def dice_box_plot(per_case: Sequence[float], path: str | Path, title: str = "per-case Dice") -> Path:
    fig, ax = plt.subplots(figsize=(4, 5))
    ax.boxplot([list(per_case)], tick_labels=["test cases"])
    ax.set_ylabel("Dice")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path

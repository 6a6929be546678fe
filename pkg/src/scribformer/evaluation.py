"""Dice scoring, per-class aggregation and bootstrap confidence intervals."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import Sample
from .errors import DatasetError, ValidationError
from .network import ScribFormer


def dice_score(pred: np.ndarray, gt: np.ndarray, k: int) -> float:
    """Set-overlap Dice 2|P∩G|/(|P|+|G|) for class k; 1.0 when both sets are empty."""
    if pred.shape != gt.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred == k
    g = gt == k
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def bootstrap_ci(
    per_case: Sequence[float],
    resamples: int = 10000,
    level: float = 0.95,
    rng: np.random.Generator | int | None = None,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of case-level scores."""
    values = np.asarray(per_case, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("bootstrap over an empty case list")
    if resamples < 1:
        raise ValidationError("need at least one resample")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"confidence level must lie in (0,1), got {level}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    means = values[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    low = float(np.quantile(means, tail))
    high = float(np.quantile(means, 1.0 - tail))
    return low, high


@dataclass
class EvalResult:
    per_class_dice: list[float]
    mean_dice: float
    per_case_dice: list[float]
    case_ids: list[str] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    ci_low: float | None = None
    ci_high: float | None = None
    confidence_level: float | None = None

    def to_json(self) -> dict:
        return {
            "mean_dice": self.mean_dice,
            "per_class_dice": self.per_class_dice,
            "per_case_dice": self.per_case_dice,
            "case_ids": self.case_ids,
            "class_names": self.class_names,
            "num_cases": len(self.per_case_dice),
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "confidence_level": self.confidence_level,
        }


def images_tensor(samples: Sequence[Sample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.image for s in samples])).unsqueeze(1)


def scribbles_tensor(samples: Sequence[Sample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.scribble for s in samples])).long()


def predict_dataset(
    model: ScribFormer,
    samples: Sequence[Sample],
    branch: str = "mean",
    batch_size: int = 8,
    device: str = "cpu",
) -> list[np.ndarray]:
    """Predicted class masks for every sample, in order."""
    was_training = model.training
    model.eval()
    preds: list[np.ndarray] = []
    try:
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            imgs = images_tensor(chunk).to(device)
            masks = model.predict(imgs, branch=branch)
            preds.extend(m.cpu().numpy().astype(np.uint8) for m in masks)
    finally:
        model.train(was_training)
    return preds


def evaluate(
    model: ScribFormer,
    samples: Sequence[Sample],
    branch: str = "mean",
    batch_size: int = 8,
    device: str = "cpu",
    case_of: Callable[[str], str] | None = None,
    class_names: Sequence[str] | None = None,
    bootstrap: int = 0,
    level: float = 0.95,
    rng: np.random.Generator | int | None = None,
) -> EvalResult:
    """Per-case, per-foreground-class Dice with case-then-class aggregation.

    Single images stand as their own cases unless ``case_of`` maps sample ids
    to case ids. Every sample must carry a dense mask.
    """
    if not samples:
        raise ValidationError("evaluate called with an empty dataset")
    for s in samples:
        if s.dense_mask is None:
            raise DatasetError(f"sample {s.id!r} has no dense mask; cannot evaluate")

    k = model.num_classes
    preds = predict_dataset(model, samples, branch=branch, batch_size=batch_size, device=device)

    # rows: samples, cols: foreground classes
    table = np.array(
        [[dice_score(p, s.dense_mask, c) for c in range(1, k)] for p, s in zip(preds, samples)]
    )

    case_fn = case_of or (lambda sid: sid)
    case_rows: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        case_rows.setdefault(case_fn(s.id), []).append(i)
    case_ids = sorted(case_rows)
    per_case_class = np.stack([table[case_rows[cid]].mean(axis=0) for cid in case_ids])

    per_class = per_case_class.mean(axis=0)
    per_case = per_case_class.mean(axis=1)
    result = EvalResult(
        per_class_dice=[float(v) for v in per_class],
        mean_dice=float(per_class.mean()),
        per_case_dice=[float(v) for v in per_case],
        case_ids=case_ids,
        class_names=list(class_names) if class_names else [f"class{c}" for c in range(1, k)],
    )
    if bootstrap:
        result.ci_low, result.ci_high = bootstrap_ci(per_case, bootstrap, level, rng)
        result.confidence_level = level
    return result


def save_predictions(
    model: ScribFormer,
    samples: Sequence[Sample],
    out_dir: str | Path,
    branch: str = "mean",
    batch_size: int = 8,
    device: str = "cpu",
    save_probs: bool = False,
) -> list[Path]:
    """Write predicted masks as 8-bit class-index PNGs.

    With ``save_probs`` each sample also gets a raw float32 dump of its
    probability map plus a JSON sidecar recording shape/dtype/order.
    """
    import cv2

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    was_training = model.training
    model.eval()
    written = []
    try:
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            imgs = images_tensor(chunk).to(device)
            probs = model.predict_probs(imgs, branch=branch)
            masks = probs.argmax(dim=1)
            for s, mask, p in zip(chunk, masks, probs):
                png = out_dir / f"{s.id}.png"
                cv2.imwrite(str(png), mask.cpu().numpy().astype(np.uint8))
                written.append(png)
                if save_probs:
                    arr = p.cpu().numpy().astype(np.float32)
                    raw = out_dir / f"{s.id}.f32"
                    arr.tofile(raw)
                    (out_dir / f"{s.id}.json").write_text(
                        json.dumps({"shape": list(arr.shape), "dtype": "float32", "order": "C"})
                    )
                    written.append(raw)
    finally:
        model.train(was_training)
    return written


def write_report(result: EvalResult, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(result.to_json(), indent=2))


def schema_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("scribformer.schemas").joinpath("eval_report.schema.json")))

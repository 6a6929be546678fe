"""Mixed-supervision objectives: scribble, pseudo-label and ACAM-consistency losses.

All functions accept class-first tensors, either unbatched (K, H, W) or
batched (B, K, H, W); label maps drop the class axis. Hard targets (the mixed
pseudo label and the binarized deep activation map) are constants: no
gradient flows through them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

from .data import UNLABELED
from .errors import ConfigError, ValidationError

LOG_EPS = 1e-12
DICE_EPS = 1e-5

# class axis for (B, K, H, W) and (K, H, W) tensors alike
_CLS = -3


@dataclass
class LossWeights:
    """Balance factors for the three supervision terms."""

    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.1
    omega: tuple[float, float, float, float] = (0.25, 0.5, 0.75, 1.0)
    alpha: str | float = "dynamic"

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be nonnegative")
        self.omega = tuple(float(w) for w in self.omega)
        if len(self.omega) != 4 or min(self.omega) < 0:
            raise ConfigError("omega must be 4 nonnegative values")
        if isinstance(self.alpha, str):
            if self.alpha != "dynamic":
                raise ConfigError(f"alpha must be 'dynamic' or a number in (0,1), got {self.alpha!r}")
        elif not 0.0 < float(self.alpha) < 1.0:
            raise ConfigError(f"fixed alpha must lie in (0, 1), got {self.alpha}")


@dataclass
class LossReport:
    """Scalar loss terms from one optimization step."""

    l_ss: float
    l_pl: float
    l_acam: float
    l_total: float
    alpha: float

    CSV_FIELDS = ("l_ss", "l_pl", "l_acam", "l_total", "alpha")

    def row(self) -> list[float]:
        return [self.l_ss, self.l_pl, self.l_acam, self.l_total, self.alpha]


def partial_cross_entropy(probs: torch.Tensor, scribble: torch.Tensor) -> torch.Tensor:
    """Cross-entropy over scribble-labeled pixels only, averaged over that set.

    Unlabeled pixels (sentinel 255) never enter the reduction, so the result
    is bit-for-bit independent of predictions outside the labeled set.
    Returns 0 when no pixel is labeled.
    """
    if probs.shape[:_CLS] + probs.shape[_CLS + 1 :] != scribble.shape:
        raise ValidationError(
            f"probability map {tuple(probs.shape)} does not match scribble {tuple(scribble.shape)}"
        )
    k = probs.shape[_CLS]
    labeled = scribble != UNLABELED
    labels = scribble[labeled].long()
    if labels.numel() == 0:
        return probs.new_zeros(())
    if int(labels.max()) >= k:
        raise ValidationError(f"scribble contains class {int(labels.max())} >= K={k}")
    flat = torch.movedim(probs, _CLS, -1)[labeled]  # (n_labeled, K)
    picked = flat.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    return -torch.log(picked.clamp_min(LOG_EPS)).mean()


def scribble_loss(
    probs_cnn: torch.Tensor, probs_trans: torch.Tensor, scribble: torch.Tensor
) -> torch.Tensor:
    """Average of the two branches' partial cross-entropies."""
    return (
        partial_cross_entropy(probs_cnn, scribble) + partial_cross_entropy(probs_trans, scribble)
    ) / 2


def mix_pseudo_label(
    probs_cnn: torch.Tensor, probs_trans: torch.Tensor, alpha: float
) -> torch.Tensor:
    """Hard pseudo label: per-pixel argmax of the alpha-mixed predictions.

    The result is a constant integer map (detached); ties go to the lowest
    class index.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie strictly inside (0, 1), got {alpha}")
    with torch.no_grad():
        mixed = alpha * probs_cnn + (1.0 - alpha) * probs_trans
        return mixed.argmax(dim=_CLS)


def _one_hot(labels: torch.Tensor, k: int, dtype: torch.dtype) -> torch.Tensor:
    hot = F.one_hot(labels.long(), num_classes=k).to(dtype)
    return torch.movedim(hot, -1, _CLS)


def dice_loss(probs: torch.Tensor, target: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """Soft Dice loss against a hard label map, averaged over classes."""
    k = probs.shape[_CLS]
    hot = _one_hot(target, k, probs.dtype)
    axes = [d for d in range(probs.dim()) if d != probs.dim() + _CLS]
    inter = (probs * hot).sum(dim=axes)
    denom = probs.sum(dim=axes) + hot.sum(dim=axes)
    dice = (2 * inter + eps) / (denom + eps)
    return 1.0 - dice.mean()


def pseudo_label_loss(
    probs_cnn: torch.Tensor, probs_trans: torch.Tensor, pseudo: torch.Tensor
) -> torch.Tensor:
    """Mean of both branches' Dice losses against the fixed pseudo label."""
    return (dice_loss(probs_cnn, pseudo) + dice_loss(probs_trans, pseudo)) / 2


def acam_filter(acam: torch.Tensor) -> torch.Tensor:
    """Map raw activation values to (0, 1)."""
    return torch.sigmoid(acam)


def binarize_target(filtered: torch.Tensor) -> torch.Tensor:
    """Threshold a filtered map at 0.5 into a constant 0/1 target; ties go to 1."""
    return (filtered.detach() >= 0.5).to(filtered.dtype)


def acam_consistency_loss(
    acams: Sequence[torch.Tensor],
    omega: Sequence[float],
    align: Callable[[torch.Tensor, int], torch.Tensor] | None = None,
) -> torch.Tensor:
    """Weighted BCE of the four shallow activation maps against the deep target.

    ``acams`` holds the five per-stage raw (pre-sigmoid) maps. The deepest map
    is filtered, binarized and detached; each shallow map is passed through
    ``align(map, stage)`` (identity when None), filtered, and compared to the
    target with per-element binary cross-entropy. Gradients flow only through
    the shallow/aligned path.
    """
    if len(acams) != 5:
        raise ValidationError(f"expected 5 per-stage activation maps, got {len(acams)}")
    target = binarize_target(acam_filter(acams[4].detach()))
    total = acams[0].new_zeros(())
    for i, (raw, w) in enumerate(zip(acams[:4], omega), start=1):
        aligned = align(raw, i) if align is not None else raw
        if aligned.shape != target.shape:
            raise ValidationError(
                f"aligned stage-{i} map {tuple(aligned.shape)} does not match "
                f"deep target {tuple(target.shape)}"
            )
        total = total + w * F.binary_cross_entropy_with_logits(aligned, target)
    return total


def _scalar(x: torch.Tensor | float) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def total_loss(
    l_ss: torch.Tensor | float,
    l_pl: torch.Tensor | float,
    l_acam: torch.Tensor | float,
    weights: LossWeights,
    alpha: float,
) -> tuple[torch.Tensor | float, LossReport]:
    """Combine the three terms; returns the differentiable total and a report."""
    total = weights.lambda1 * l_ss + weights.lambda2 * l_pl + weights.lambda3 * l_acam
    report = LossReport(
        l_ss=_scalar(l_ss), l_pl=_scalar(l_pl), l_acam=_scalar(l_acam),
        l_total=_scalar(total), alpha=float(alpha),
    )
    return total, report

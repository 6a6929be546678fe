"""Optimization loop, checkpointing and deterministic experiment orchestration.

Every stochastic decision (shuffling, augmentation, the pseudo-label mixing
coefficient) uses a generator derived from (seed, purpose, counters), so runs
are pure functions of the config and resuming at an epoch boundary reproduces
the unbroken run bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch
from torch.optim import Optimizer

from .config import TrainConfig, to_ini
from .data import Sample, augment, load_dataset, read_info
from .decoders import softmax_probs
from .errors import CheckpointError, ConfigError, NonFiniteLossError
from .evaluation import evaluate, images_tensor, scribbles_tensor
from .losses import (
    LossReport,
    LossWeights,
    acam_consistency_loss,
    mix_pseudo_label,
    pseudo_label_loss,
    scribble_loss,
    total_loss,
)
from .network import ScribFormer

TRAIN_LOG_FIELDS = ("step",) + LossReport.CSV_FIELDS
VAL_LOG_FIELDS = ("epoch", "mean_dice")
WORKERS_ENV = "SCRIBFORMER_NUM_WORKERS"


class DecoupledAdamW(Optimizer):
    """Adam with weight decay fully decoupled from the learning rate.

    The decay multiplies parameters by (1 - weight_decay) every step no
    matter the learning rate, so lr=0 with positive decay shrinks parameters
    while gradients are ignored.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if lr < 0 or eps <= 0 or not 0 <= betas[0] < 1 or not 0 <= betas[1] < 1:
            raise ConfigError("invalid optimizer hyperparameters")
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay))

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                if group["weight_decay"]:
                    p.mul_(1.0 - group["weight_decay"])
                if p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                m, v = state["exp_avg"], state["exp_avg_sq"]
                m.mul_(beta1).add_(p.grad, alpha=1 - beta1)
                v.mul_(beta2).addcmul_(p.grad, p.grad, value=1 - beta2)
                mhat = m / (1 - beta1 ** state["step"])
                vhat = v / (1 - beta2 ** state["step"])
                p.add_(mhat / (vhat.sqrt() + group["eps"]), alpha=-group["lr"])
        return loss


def derived_rng(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Independent generator keyed by (seed, purpose, indices)."""
    tag = int.from_bytes(hashlib.sha256(purpose.encode()).digest()[:4], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, tag) + indices)))


def draw_alpha(weights: LossWeights, seed: int, step: int) -> float:
    if weights.alpha == "dynamic":
        a = float(derived_rng(seed, "alpha", step).random())
        return min(max(a, 1e-6), 1.0 - 1e-6)
    return float(weights.alpha)


def train_step(
    batch: tuple[torch.Tensor, torch.Tensor],
    model: ScribFormer,
    optimizer: Optimizer,
    weights: LossWeights,
    alpha: float,
) -> LossReport:
    """One forward/backward/update pass; aborts on a non-finite loss."""
    images, scribbles = batch
    with_acam = weights.lambda3 > 0
    out = model(images, with_acam=with_acam)
    probs_cnn = softmax_probs(out.logits_cnn)
    probs_trans = softmax_probs(out.logits_trans)

    l_ss = scribble_loss(probs_cnn, probs_trans, scribbles)
    pseudo = mix_pseudo_label(probs_cnn, probs_trans, alpha)
    l_pl = pseudo_label_loss(probs_cnn, probs_trans, pseudo)
    if with_acam:
        l_acam = acam_consistency_loss(out.acams, weights.omega, align=model.acam_branch.align)
    else:
        l_acam = 0.0
    total, report = total_loss(l_ss, l_pl, l_acam, weights, alpha)

    if not math.isfinite(report.l_total):
        raise NonFiniteLossError(
            f"non-finite loss at this step: {report}",
            components=dict(zip(LossReport.CSV_FIELDS, report.row())),
        )
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return report


def _augment_batch(samples: list[Sample], seed: int, epoch: int, indices: list[int]) -> list[Sample]:
    workers = int(os.environ.get(WORKERS_ENV, "1") or "1")
    jobs = [(samples[i], derived_rng(seed, "aug", epoch, i)) for i in indices]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda j: augment(*j), jobs))
    return [augment(s, r) for s, r in jobs]


def _append_csv(path: Path, fields: tuple[str, ...], row: list) -> None:
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(fields)
        writer.writerow(row)


def save_checkpoint(payload: dict, path: str | Path) -> None:
    """Serialize with a sha256 checksum so corruption is detected on load."""
    buf = io.BytesIO()
    torch.save(payload, buf)
    blob = buf.getvalue()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"sha256": hashlib.sha256(blob).hexdigest(), "blob": blob}, str(path))


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        wrapper = torch.load(str(path), map_location="cpu", weights_only=False)
        blob = wrapper["blob"]
        digest = wrapper["sha256"]
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if hashlib.sha256(blob).hexdigest() != digest:
        raise CheckpointError(f"checkpoint {path} failed its integrity check")
    return torch.load(io.BytesIO(blob), map_location="cpu", weights_only=False)


def apply_model_state(model: ScribFormer, state: dict) -> None:
    """Load parameters, naming the first mismatched tensor on failure."""
    own = model.state_dict()
    if set(own) != set(state):
        missing = sorted(set(own) ^ set(state))
        raise CheckpointError(f"architecture mismatch: differing tensors {missing[:4]}")
    for name, tensor in state.items():
        if tuple(own[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {tuple(tensor.shape)} "
                f"vs model {tuple(own[name].shape)}"
            )
    model.load_state_dict(state)


def build_model(cfg: TrainConfig, num_classes: int) -> ScribFormer:
    torch.manual_seed(cfg.seed)
    return ScribFormer(num_classes, cfg.encoder, use_transformer=cfg.use_transformer).to(cfg.device)


def _checkpoint_payload(
    model, optimizer, cfg: TrainConfig, epoch: int, step: int, best: float
) -> dict:
    return {
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict(),
        "epoch": epoch,
        "global_step": step,
        "best_dice": best,
        "config_ini": to_ini(cfg),
        "num_classes": model.num_classes,
        "rng": {"torch": torch.get_rng_state()},
    }


def fit(cfg: TrainConfig, resume_from: str | Path | None = None) -> Path:
    """Train per the config; returns the populated run directory."""
    run_dir = Path(cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(to_ini(cfg))
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    info = read_info(cfg.data_root)
    train_samples = load_dataset(cfg.data_root, "train", cfg.image_size)
    val_samples = load_dataset(cfg.data_root, "val", cfg.image_size)
    if not train_samples:
        raise ConfigError(f"no training samples under {cfg.data_root}")

    model = build_model(cfg, info.num_classes)
    optimizer = DecoupledAdamW(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )

    start_epoch, global_step, best = 0, 0, -1.0
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        apply_model_state(model, payload["model_state"])
        optimizer.load_state_dict(payload["optimizer_state"])
        torch.set_rng_state(payload["rng"]["torch"])
        start_epoch = payload["epoch"]
        global_step = payload["global_step"]
        best = payload["best_dice"]

    model.train()
    for epoch in range(start_epoch, cfg.epochs):
        order = derived_rng(cfg.seed, "shuffle", epoch).permutation(len(train_samples))
        for lo in range(0, len(order), cfg.batch_size):
            idx = [int(i) for i in order[lo : lo + cfg.batch_size]]
            batch_samples = _augment_batch(train_samples, cfg.seed, epoch, idx)
            batch = (
                images_tensor(batch_samples).to(cfg.device),
                scribbles_tensor(batch_samples).to(cfg.device),
            )
            alpha = draw_alpha(cfg.loss, cfg.seed, global_step)
            report = train_step(batch, model, optimizer, cfg.loss, alpha)
            global_step += 1
            _append_csv(run_dir / "train_log.csv", TRAIN_LOG_FIELDS, [global_step] + report.row())

        if val_samples:
            result = evaluate(
                model, val_samples, branch=cfg.eval_branch,
                batch_size=cfg.batch_size, device=cfg.device,
            )
            _append_csv(run_dir / "val_log.csv", VAL_LOG_FIELDS, [epoch + 1, result.mean_dice])
            if result.mean_dice >= best:
                best = result.mean_dice
                save_checkpoint(
                    _checkpoint_payload(model, optimizer, cfg, epoch + 1, global_step, best),
                    ckpt_dir / "best.pt",
                )
        save_checkpoint(
            _checkpoint_payload(model, optimizer, cfg, epoch + 1, global_step, best),
            ckpt_dir / "last.pt",
        )
    if not (ckpt_dir / "best.pt").exists():
        save_checkpoint(
            _checkpoint_payload(model, optimizer, cfg, cfg.epochs, global_step, best),
            ckpt_dir / "best.pt",
        )
    return run_dir

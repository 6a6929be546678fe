"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion lines.
The end-to-end experiment (criterion 7) and the ablation comparison
(criterion 8) train real models on the synthetic set and take a few minutes
each on one CPU core.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import assert_grad_close, fd_gradient, tiny_encoder_config
from scribformer.acam import ModulationParams, gaussian_modulation
from scribformer.config import load_config
from scribformer.data import UNLABELED, load_dataset
from scribformer.decoders import softmax_probs
from scribformer.evaluation import bootstrap_ci, dice_score, evaluate
from scribformer.losses import (
    LossWeights,
    acam_consistency_loss,
    mix_pseudo_label,
    partial_cross_entropy,
    pseudo_label_loss,
    scribble_loss,
    total_loss,
)
from scribformer.network import ScribFormer
from scribformer.training import apply_model_state, build_model, fit, load_checkpoint

OMEGA = (0.25, 0.5, 0.75, 1.0)


def _report(num: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    line = f"CRITERION {num} [{status}] {name}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


def test_criterion_1_paper_scale_documented():
    readme = Path(__file__).resolve().parent.parent / "README.md"
    text = readme.read_text() if readme.is_file() else ""
    ok = "not reproducible at desk scale" in text.lower()
    _report(1, "paper-scale results documented as out of desk-scale reach", ok)


def _grad_instance(seed):
    g = torch.Generator().manual_seed(seed)
    logits_cnn = torch.randn(3, 6, 6, generator=g, dtype=torch.float64)
    logits_trans = torch.randn(3, 6, 6, generator=g, dtype=torch.float64)
    scrib = torch.randint(0, 3, (6, 6), generator=g)
    scrib[torch.rand(6, 6, generator=g) > 0.4] = UNLABELED
    acams = [torch.randn(3, 6, 6, generator=g, dtype=torch.float64) for _ in range(5)]
    return logits_cnn, logits_trans, scrib, acams


def test_criterion_2_gradient_suite():
    t0 = time.time()
    weights = LossWeights()
    for seed in range(20):
        lc, lt, scrib, acams = _grad_instance(seed)
        pseudo = mix_pseudo_label(softmax_probs(lc), softmax_probs(lt), 0.6)

        def l_ss(c, t):
            return scribble_loss(softmax_probs(c), softmax_probs(t), scrib)

        def l_pl(c, t):
            return pseudo_label_loss(softmax_probs(c), softmax_probs(t), pseudo)

        def l_acam(shallow0):
            return acam_consistency_loss([shallow0] + acams[1:], OMEGA)

        def l_tot(c, t):
            return weights.lambda1 * l_ss(c, t) + weights.lambda2 * l_pl(c, t) \
                + weights.lambda3 * l_acam(acams[0])

        for fn in (l_ss, l_pl, l_tot):
            for which in (0, 1):
                def scalar(x, _fn=fn, _w=which):
                    return _fn(x, lt) if _w == 0 else _fn(lc, x)

                base = (lc if which == 0 else lt).clone()
                xg = base.clone().requires_grad_(True)
                scalar(xg).backward()
                fd = fd_gradient(scalar, base)
                assert_grad_close(xg.grad, fd, rtol=1e-4)

        xg = acams[0].clone().requires_grad_(True)
        l_acam(xg).backward()
        fd = fd_gradient(l_acam, acams[0].clone())
        assert_grad_close(xg.grad, fd, rtol=1e-4)
    elapsed = time.time() - t0
    _report(2, "analytic gradients match finite differences (20 seeds)",
            elapsed < 60, f"{elapsed:.1f}s")


def test_criterion_3_unlabeled_pixel_independence():
    g = torch.Generator().manual_seed(0)
    probs_c = torch.rand(3, 8, 8, generator=g).softmax(0)
    probs_t = torch.rand(3, 8, 8, generator=g).softmax(0)
    scrib = torch.randint(0, 3, (8, 8), generator=g)
    scrib[torch.rand(8, 8, generator=g) > 0.3] = UNLABELED
    base = float(scribble_loss(probs_c, probs_t, scrib))
    unlabeled = scrib == UNLABELED
    ok = True
    for _ in range(100):
        pc = probs_c.clone()
        pt = probs_t.clone()
        pc[:, unlabeled] = torch.rand(3, int(unlabeled.sum()), generator=g)
        pt[:, unlabeled] = torch.rand(3, int(unlabeled.sum()), generator=g)
        ok &= float(scribble_loss(pc, pt, scrib)) == base
    _report(3, "perturbing predictions off the scribble set changes L_ss by exactly 0", ok)


def test_criterion_4_pseudo_label_invariance():
    g = torch.Generator().manual_seed(1)
    ok = True
    for _ in range(20):
        probs_c = torch.rand(4, 5, 5, generator=g).softmax(0)
        arg = probs_c.argmax(0)
        boost = torch.zeros_like(probs_c).scatter_(0, arg.unsqueeze(0), 2.0)
        probs_t = (torch.rand(4, 5, 5, generator=g) + boost).softmax(0)
        assert torch.equal(probs_t.argmax(0), arg)
        for alpha in [0.01] + [round(0.1 * k, 1) for k in range(1, 10)] + [0.99]:
            ok &= torch.equal(mix_pseudo_label(probs_c, probs_t, alpha), arg)

    # alpha-threshold example: solving 0.6a+0.2(1-a) > 0.4a+0.8(1-a) gives
    # a > 3/4 for class 0; verified at +-1e-9 around the crossover
    cnn = torch.tensor([[[0.6]], [[0.4]]], dtype=torch.float64)
    trans = torch.tensor([[[0.2]], [[0.8]]], dtype=torch.float64)
    ok &= int(mix_pseudo_label(cnn, trans, 0.75 - 1e-9)[0, 0]) == 1
    ok &= int(mix_pseudo_label(cnn, trans, 0.75 + 1e-9)[0, 0]) == 0
    _report(4, "pseudo label equals the shared argmax for all alpha; threshold at 3/4", ok)


def test_criterion_5_shape_suite():
    t0 = time.time()
    torch.manual_seed(0)
    cfg = tiny_encoder_config()
    ok = True
    for size in (128, 256):
        model = ScribFormer(3, cfg).eval()
        with torch.no_grad():
            out = model(torch.randn(1, 1, size, size))
        ok &= tuple(out.logits_cnn.shape) == (1, 3, size, size)
        ok &= tuple(out.logits_trans.shape) == (1, 3, size, size)
        want_sides = [size // 2, size // 4, size // 8, size // 16, size // 16]
        ok &= [a.shape[-1] for a in out.acams] == want_sides
        ok &= out.state.final_tokens.shape[1] == (size // 16) ** 2
    elapsed = time.time() - t0
    _report(5, "resolution schedule holds at 128 and 256", ok and elapsed < 30, f"{elapsed:.1f}s")


def test_criterion_6_detach_boundaries():
    g = torch.Generator().manual_seed(2)
    eps = 1e-4
    ok = True

    # pseudo-label path: perturb the mixing inputs only
    probs_c = torch.rand(3, 6, 6, generator=g, dtype=torch.float64).softmax(0)
    probs_t = torch.rand(3, 6, 6, generator=g, dtype=torch.float64).softmax(0)
    mixed = 0.6 * probs_c + 0.4 * probs_t
    top2 = mixed.topk(2, dim=0).values
    assert float((top2[0] - top2[1]).min()) > 10 * eps  # off the decision boundary
    y0 = mix_pseudo_label(probs_c, probs_t, 0.6)
    base = float(pseudo_label_loss(probs_c, probs_t, y0))
    for _ in range(20):
        delta = (torch.rand_like(probs_c) - 0.5) * 2 * eps
        y1 = mix_pseudo_label(probs_c + delta, probs_t, 0.6)
        ok &= torch.equal(y0, y1)
        ok &= float(pseudo_label_loss(probs_c, probs_t, y1)) == base

    # binarized deep map: perturb behind the constant target
    acams = [torch.randn(3, 6, 6, generator=g, dtype=torch.float64) for _ in range(5)]
    assert float(acams[4].abs().min()) > 10 * eps  # away from the 0.5 threshold
    base_acam = float(acam_consistency_loss(acams, OMEGA))
    for _ in range(20):
        deep = acams[4] + (torch.rand_like(acams[4]) - 0.5) * 2 * eps
        ok &= float(acam_consistency_loss(acams[:4] + [deep], OMEGA)) == base_acam

    # autograd view: with only the deep map differentiable there is no
    # gradient path at all, so the loss carries no graph
    deep = acams[4].clone().requires_grad_(True)
    loss = acam_consistency_loss(acams[:4] + [deep], OMEGA)
    ok &= not loss.requires_grad
    _report(6, "hard targets are gradient-free constants (Y and binarized deep map)", ok)


def test_criterion_7_desk_scale_experiment(synth_root, desk_run):
    payload = load_checkpoint(desk_run / "checkpoints" / "best.pt")
    cfg = load_config(path=desk_run / "config.ini")
    model = build_model(cfg, payload["num_classes"])
    apply_model_state(model, payload["model_state"])
    test_samples = load_dataset(synth_root, "test")
    result = evaluate(model, test_samples, branch=cfg.eval_branch)
    ok = result.mean_dice >= 0.80
    _report(7, "desk-scale training reaches mean test Dice >= 0.80", ok,
            f"dice {result.mean_dice:.4f}, per-class "
            + ",".join(f"{v:.3f}" for v in result.per_class_dice))


def test_trained_acam_overlaps_prediction(synth_root, desk_run):
    """Stage-5 heatmap hot region intersects the predicted majority class region."""
    import cv2

    from scribformer.cli import main
    from scribformer.losses import acam_filter

    payload = load_checkpoint(desk_run / "checkpoints" / "best.pt")
    cfg = load_config(path=desk_run / "config.ini")
    model = build_model(cfg, payload["num_classes"])
    apply_model_state(model, payload["model_state"])
    model.eval()

    sample = load_dataset(synth_root, "test")[0]
    img = torch.from_numpy(sample.image).unsqueeze(0).unsqueeze(0)
    with torch.no_grad():
        out = model(img)
        pred = model.predict(img)[0].numpy()
        deep = acam_filter(out.acams[4])[0].numpy()

    fg_counts = [(pred == k).sum() for k in range(1, model.num_classes)]
    k_star = int(np.argmax(fg_counts)) + 1
    heat = cv2.resize(deep[k_star], pred.shape[::-1], interpolation=cv2.INTER_NEAREST)
    hot = heat >= heat.min() + 0.5 * (heat.max() - heat.min())
    inter = (hot & (pred == k_star)).sum()
    union = (hot | (pred == k_star)).sum()
    assert union > 0 and inter / union > 0

    # the CLI writes the full heatmap set plus overlay for the same sample
    rc = main(["visualize", "--run", str(desk_run), "--data", str(synth_root),
               "--split", "test", sample.id])
    assert rc == 0
    dest = desk_run / "acam" / sample.id
    assert len(list(dest.glob("stage*_class*.png"))) == 5 * model.num_classes
    assert (dest / "overlay.png").is_file()


def test_criterion_8_ablation_direction(synth_root, desk_run, tmp_path_factory):
    out_base = tmp_path_factory.mktemp("ablation")
    test_samples = load_dataset(synth_root, "test")

    def run(seed: int, cnn_only: bool) -> float:
        if not cnn_only and seed == 0:
            run_dir = desk_run  # the shared fixture is the seed-0 full model
        else:
            overrides = {
                "data.root": str(synth_root),
                "train.out_dir": str(out_base / f"{'cnn' if cnn_only else 'full'}_{seed}"),
                "train.seed": str(seed),
            }
            if cnn_only:
                overrides["model.use_transformer"] = "false"
                overrides["loss.lambda3"] = "0"
            run_dir = fit(load_config("desk", overrides=overrides))
        payload = load_checkpoint(run_dir / "checkpoints" / "best.pt")
        cfg = load_config(path=run_dir / "config.ini")
        model = build_model(cfg, payload["num_classes"])
        apply_model_state(model, payload["model_state"])
        return evaluate(model, test_samples, branch=cfg.eval_branch).mean_dice

    seeds = (0, 1, 2)
    full = [run(s, cnn_only=False) for s in seeds]
    cnn = [run(s, cnn_only=True) for s in seeds]
    margin = float(np.mean(full) - np.mean(cnn))
    ok = margin >= 0.02
    _report(8, "triple-branch model beats the CNN-only ablation by >= 0.02 Dice", ok,
            f"full {np.mean(full):.4f} vs cnn-only {np.mean(cnn):.4f}, margin {margin:.4f}")


def test_criterion_9_metric_oracles():
    ok = True
    rng = np.random.default_rng(3)
    for _ in range(1000):
        a = rng.integers(0, 3, (16, 16)).astype(np.uint8)
        b = rng.integers(0, 3, (16, 16)).astype(np.uint8)
        k = int(rng.integers(0, 3))
        p = int((a == k).sum())
        g = int((b == k).sum())
        inter = int(((a == k) & (b == k)).sum())
        want = 1.0 if p + g == 0 else 2.0 * inter / (p + g)
        ok &= dice_score(a, b, k) == want

    low, high = bootstrap_ci([0.8] * 10, resamples=2000, rng=0)
    ok &= low == 0.8 and high == 0.8

    params = ModulationParams(mu=0.4, sigma=0.15)
    vals = torch.tensor([0.4 + 0.15, 0.4 - 0.15], dtype=torch.float64)
    gates = gaussian_modulation(vals, params)
    ok &= abs(float(gates[0]) - math.exp(-0.5)) < 1e-9
    ok &= abs(float(gates[1]) - math.exp(-0.5)) < 1e-9
    _report(9, "metric oracles: exact Dice counting, point CI, Gaussian gate", ok)

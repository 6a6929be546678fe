import shutil
from pathlib import Path

import numpy as np
import pytest
import torch

from scribformer.config import load_config
from scribformer.data import write_dataset, write_info
from scribformer.encoder import EncoderConfig
from scribformer.synthetic import SyntheticSpec, dataset_info, generate_synthetic
from scribformer.training import fit


def tiny_encoder_config() -> EncoderConfig:
    return EncoderConfig(
        channels=(8, 8, 8, 8, 8), token_dim=8, num_heads=2, mlp_ratio=2, patch_size=4, pos_grid=4
    )


def fd_gradient(fn, x: torch.Tensor, eps: float = 1e-4) -> torch.Tensor:
    """Central finite differences of a scalar function w.r.t. every entry of x."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(fn(x))
            flat[i] = orig - eps
            lo = float(fn(x))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
    return grad


def assert_grad_close(analytic: torch.Tensor, fd: torch.Tensor, rtol: float, floor: float = 1e-6):
    """Relative comparison with an absolute guard for near-zero entries."""
    a = analytic.reshape(-1)
    f = fd.reshape(-1)
    scale = torch.maximum(a.abs(), f.abs())
    big = scale > floor
    if big.any():
        rel = ((a - f).abs() / scale)[big].max()
        assert float(rel) < rtol, f"relative gradient error {float(rel):.3e} > {rtol}"
    small = ~big
    if small.any():
        assert float((a - f).abs()[small].max()) < floor, "near-zero gradient entries disagree"


def write_synthetic(root: Path, **kwargs) -> SyntheticSpec:
    spec = SyntheticSpec(**kwargs)
    splits = generate_synthetic(spec)
    shutil.rmtree(root, ignore_errors=True)
    write_info(root, dataset_info(spec))
    for split, samples in splits.items():
        write_dataset(root, split, samples)
    return spec


@pytest.fixture(scope="session")
def micro_root(tmp_path_factory) -> Path:
    """Very small dataset for fast CLI / training smoke tests."""
    root = tmp_path_factory.mktemp("micro") / "ds"
    write_synthetic(
        root, num_train=8, num_val=2, num_test=2, image_size=64,
        num_classes=3, scribble_coverage=0.10, seed=5,
    )
    return root


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory) -> Path:
    """The acceptance-scale dataset: 200/20/30 samples, K=4, fixed seed."""
    root = tmp_path_factory.mktemp("synth") / "ds"
    write_synthetic(
        root, num_train=200, num_val=20, num_test=30, image_size=96,
        num_classes=4, scribble_coverage=0.10, seed=7,
    )
    return root


@pytest.fixture(scope="session")
def desk_run(synth_root, tmp_path_factory) -> Path:
    """One full desk-preset training run (30 epochs, batch 8), shared by tests."""
    out = tmp_path_factory.mktemp("runs") / "desk"
    cfg = load_config(
        "desk",
        overrides={
            "data.root": str(synth_root),
            "train.out_dir": str(out),
            "train.seed": "0",
        },
    )
    return fit(cfg)


@pytest.fixture(scope="session")
def micro_run(micro_root, tmp_path_factory) -> Path:
    """Three-epoch smoke run used by CLI tests that need any trained model."""
    out = tmp_path_factory.mktemp("runs") / "micro"
    cfg = load_config(
        "desk",
        overrides={
            "data.root": str(micro_root),
            "data.image_size": "64",
            "train.out_dir": str(out),
            "train.epochs": "3",
            "train.seed": "1",
        },
    )
    return fit(cfg)


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    np.random.seed(0)

"""Run configuration: INI files with [data]/[model]/[loss]/[train]/[eval] sections.

Precedence is preset defaults < config file < command-line overrides. Unknown
sections or keys are rejected by name. The merged configuration is immutable
for a run and snapshotted into the run directory.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import LossWeights

PRESETS = ("desk", "paper")


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.replace(",", " ").split())


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.replace(",", " ").split())


def _parse_alpha(s: str):
    return s.strip() if s.strip() == "dynamic" else float(s)


# section -> key -> parser
_SCHEMA = {
    "data": {"root": str, "image_size": int},
    "model": {
        "channels": _parse_ints,
        "token_dim": int,
        "num_heads": int,
        "mlp_ratio": int,
        "patch_size": int,
        "pos_grid": int,
        "use_transformer": _parse_bool,
    },
    "loss": {
        "lambda1": float,
        "lambda2": float,
        "lambda3": float,
        "omega": _parse_floats,
        "alpha": _parse_alpha,
    },
    "train": {
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
        "weight_decay": float,
        "seed": int,
        "device": str,
        "out_dir": str,
    },
    "eval": {"branch": str, "bootstrap_resamples": int, "confidence_level": float},
}


@dataclass
class TrainConfig:
    """Everything one training run depends on."""

    data_root: str
    image_size: int
    encoder: EncoderConfig
    use_transformer: bool
    loss: LossWeights
    epochs: int
    batch_size: int
    learning_rate: float
    weight_decay: float
    seed: int
    device: str
    out_dir: str
    eval_branch: str
    bootstrap_resamples: int
    confidence_level: float

    def __post_init__(self):
        if self.epochs <= 0:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.eval_branch not in ("cnn", "trans", "mean"):
            raise ConfigError(f"eval branch must be cnn/trans/mean, got {self.eval_branch!r}")


def _read_ini(text: str, origin: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {origin}: {e}") from e
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{origin}: unknown key {key!r} in section [{section}]")
            out.setdefault(section, {})[key] = value
    return out


def _preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return resources.files("scribformer.presets").joinpath(f"{name}.ini").read_text()


def load_config(
    preset: str = "desk",
    path: str | Path | None = None,
    overrides: dict[str, str] | None = None,
) -> TrainConfig:
    """Merge preset defaults, an optional config file, and flag overrides.

    Override keys use dotted section.key form, e.g. ``train.epochs``.
    """
    merged = _read_ini(_preset_text(preset), f"preset {preset!r}")
    if path is not None:
        merged_file = _read_ini(Path(path).read_text(), str(path))
        for section, kv in merged_file.items():
            merged.setdefault(section, {}).update(kv)
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        section, key = dotted.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key {dotted!r}")
        merged.setdefault(section, {})[key] = str(value)

    def get(section: str, key: str):
        try:
            raw = merged[section][key]
        except KeyError:
            raise ConfigError(f"missing config value {section}.{key}") from None
        try:
            return _SCHEMA[section][key](raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({e})") from e

    encoder = EncoderConfig(
        channels=get("model", "channels"),
        token_dim=get("model", "token_dim"),
        num_heads=get("model", "num_heads"),
        mlp_ratio=get("model", "mlp_ratio"),
        patch_size=get("model", "patch_size"),
        pos_grid=get("model", "pos_grid"),
    )
    loss = LossWeights(
        lambda1=get("loss", "lambda1"),
        lambda2=get("loss", "lambda2"),
        lambda3=get("loss", "lambda3"),
        omega=get("loss", "omega"),
        alpha=get("loss", "alpha"),
    )
    return TrainConfig(
        data_root=get("data", "root"),
        image_size=get("data", "image_size"),
        encoder=encoder,
        use_transformer=get("model", "use_transformer"),
        loss=loss,
        epochs=get("train", "epochs"),
        batch_size=get("train", "batch_size"),
        learning_rate=get("train", "learning_rate"),
        weight_decay=get("train", "weight_decay"),
        seed=get("train", "seed"),
        device=get("train", "device"),
        out_dir=get("train", "out_dir"),
        eval_branch=get("eval", "branch"),
        bootstrap_resamples=get("eval", "bootstrap_resamples"),
        confidence_level=get("eval", "confidence_level"),
    )


def to_ini(cfg: TrainConfig) -> str:
    """Serialize a config back into the INI snapshot format."""
    parser = configparser.ConfigParser()
    parser["data"] = {"root": cfg.data_root, "image_size": str(cfg.image_size)}
    parser["model"] = {
        "channels": ", ".join(map(str, cfg.encoder.channels)),
        "token_dim": str(cfg.encoder.token_dim),
        "num_heads": str(cfg.encoder.num_heads),
        "mlp_ratio": str(cfg.encoder.mlp_ratio),
        "patch_size": str(cfg.encoder.patch_size),
        "pos_grid": str(cfg.encoder.pos_grid),
        "use_transformer": str(cfg.use_transformer).lower(),
    }
    parser["loss"] = {
        "lambda1": repr(cfg.loss.lambda1),
        "lambda2": repr(cfg.loss.lambda2),
        "lambda3": repr(cfg.loss.lambda3),
        "omega": ", ".join(repr(w) for w in cfg.loss.omega),
        "alpha": str(cfg.loss.alpha),
    }
    parser["train"] = {
        "epochs": str(cfg.epochs),
        "batch_size": str(cfg.batch_size),
        "learning_rate": repr(cfg.learning_rate),
        "weight_decay": repr(cfg.weight_decay),
        "seed": str(cfg.seed),
        "device": cfg.device,
        "out_dir": cfg.out_dir,
    }
    parser["eval"] = {
        "branch": cfg.eval_branch,
        "bootstrap_resamples": str(cfg.bootstrap_resamples),
        "confidence_level": repr(cfg.confidence_level),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()

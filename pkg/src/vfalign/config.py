"""Flat key = value configuration files.

One file drives corpus generation, model construction, and training; the
key set is the union of the three config dataclasses' fields. `vocab_size`
always counts word tokens (the four specials are added internally when the
model vocabulary is built), and `feature_dim`/`seed` are shared. Unknown
keys are rejected; command-line flags override file values.
"""

from __future__ import annotations

from pathlib import Path

from .model import CglConfig, VocabSpec
from .synth import SynthConfig
from .training import TrainConfig


class CliUsageError(ValueError):
    """Bad flags, bad config keys, or malformed inputs. Exit code 1."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise CliUsageError(f"expected a boolean, got {text!r}")


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    # corpus
    "vocab_size": (int, 20),
    "feature_dim": (int, 16),
    "n_min": (int, 4),
    "n_max": (int, 8),
    "min_dur": (int, 3),
    "dur_p": (float, 0.4),
    "p_sil": (float, 0.4),
    "sil_min": (int, 2),
    "sil_max": (int, 6),
    "noise_sigma": (float, 0.5),
    "blur": (int, 2),
    "fps": (int, 25),
    "seed": (int, 0),
    # model
    "num_layers": (int, 2),
    "embed_dim": (int, 64),
    "heads": (int, 4),
    "window": (int, 16),
    "global_kernel": (int, 31),
    "local_kernel": (int, 3),
    "decoder_layers": (int, 2),
    "dropout": (float, 0.0),
    "precision": (str, "float32"),
    # training
    "epochs": (int, 5),
    "lr": (float, 1e-3),
    "beta1": (float, 0.9),
    "beta2": (float, 0.98),
    "eps": (float, 1e-9),
    "clip": (float, 1.0),
    "augment": (_bool, False),
    "max_mask_len": (int, 6),
    "n_masks": (int, 1),
}


def defaults() -> dict:
    return {k: v for k, (_, v) in SCHEMA.items()}


def parse_config_file(path) -> dict:
    """Read `key = value` lines; '#' starts a comment; unknown keys fail."""
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliUsageError(
                f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in SCHEMA:
            raise CliUsageError(f"{path}:{lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(val)
        except CliUsageError:
            raise
        except (TypeError, ValueError) as exc:
            raise CliUsageError(
                f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def effective_config(file_values: dict | None = None,
                     overrides: dict | None = None) -> dict:
    cfg = defaults()
    cfg.update(file_values or {})
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in SCHEMA:
            raise CliUsageError(f"unknown config key {key!r}")
        cfg[key] = val
    return cfg


def format_config(cfg: dict) -> str:
    return "\n".join(f"config {k} = {cfg[k]}" for k in sorted(cfg))


def build_synth_config(cfg: dict) -> SynthConfig:
    keys = ("vocab_size", "feature_dim", "n_min", "n_max", "min_dur",
            "dur_p", "p_sil", "sil_min", "sil_max", "noise_sigma", "blur",
            "fps", "seed")
    return SynthConfig(**{k: cfg[k] for k in keys})


def build_model_config(cfg: dict) -> tuple[CglConfig, VocabSpec]:
    vocab = VocabSpec.build(cfg["vocab_size"])
    model_cfg = CglConfig(
        num_layers=cfg["num_layers"],
        embed_dim=cfg["embed_dim"],
        heads=cfg["heads"],
        window=cfg["window"],
        global_kernel=cfg["global_kernel"],
        local_kernel=cfg["local_kernel"],
        feature_dim=cfg["feature_dim"],
        vocab_size=vocab.size,
        decoder_layers=cfg["decoder_layers"],
        dropout=cfg["dropout"],
        precision=cfg["precision"],
    )
    return model_cfg, vocab


def build_train_config(cfg: dict) -> TrainConfig:
    keys = ("epochs", "lr", "beta1", "beta2", "eps", "clip", "seed",
            "augment", "max_mask_len", "n_masks")
    return TrainConfig(**{k: cfg[k] for k in keys})

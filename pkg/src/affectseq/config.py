"""Run configuration: INI files with dotted-key CLI overrides.

A config file is standard `key = value` INI whose sections map to dotted
keys (`[mask] p = 0.2` becomes `mask.p`). Any key can be overridden on the
command line as `--mask.p 0.2`. Unknown keys and malformed values are
config errors (exit code 2).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from affectseq.errors import ConfigError, ValidationError
from affectseq.losses import FocalConfig
from affectseq.masking import MaskConfig
from affectseq.model import ModelConfig
from affectseq.optim import AdamWConfig
from affectseq.synth import SynthSpec


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s: str) -> tuple:
    s = s.strip()
    if not s:
        return ()
    return tuple(float(x) for x in s.split(","))


# dotted key -> (parser, default). Defaults are the single source of truth
# for documented keys; None means "no default, must come from file/flags".
SCHEMA = {
    "train.task": (str, "EXPR"),
    "train.batch_size": (int, 512),
    "train.T": (int, 100),
    "train.epochs": (int, 10),
    "train.eval_every": (int, 100),
    "train.seed": (int, 0),
    "train.grad_accum": (int, 1),
    "train.single_thread": (_parse_bool, True),
    "mask.p": (float, 0.15),
    "mask.seed": (int, 0),
    "mask.replacement": (str, "learned_token"),
    "model.dim_in": (int, 768),
    "model.d_model": (int, 256),
    "model.n_heads": (int, 8),
    "model.n_layers": (int, 6),
    "model.d_ff": (int, 0),
    "model.dropout": (float, 0.2),
    "optim.lr": (float, 1e-4),
    "optim.weight_decay": (float, 1e-3),
    "optim.beta1": (float, 0.9),
    "optim.beta2": (float, 0.999),
    "optim.eps": (float, 1e-8),
    "loss.alpha": (float, 0.25),
    "loss.gamma": (float, 2.0),
    "loss.ccc_compat": (_parse_bool, False),
    "paths.train_dir": (str, ""),
    "paths.val_dir": (str, ""),
    "paths.ckpt_dir": (str, ""),
    "synth.task": (str, "EXPR"),
    "synth.n_videos": (int, 4),
    "synth.frames": (int, 400),
    "synth.dim": (int, 32),
    "synth.seed": (int, 0),
    "synth.snr": (float, 10.0),
    "synth.temporal_smoothness": (int, 10),
    "synth.class_imbalance": (_parse_floats, ()),
    "synth.sentinel_rate": (float, 0.05),
    "synth.shuffle_frames": (_parse_bool, False),
    "synth.video_offset": (int, 0),
}


@dataclass(frozen=True)
class TrainConfig:
    task: str = "EXPR"
    batch_size: int = 512
    T: int = 100
    epochs: int = 10
    eval_every: int = 100
    seed: int = 0
    grad_accum: int = 1
    single_thread: bool = True
    mask: MaskConfig = MaskConfig()
    model: ModelConfig = ModelConfig()
    optim: AdamWConfig = AdamWConfig()
    loss: FocalConfig = FocalConfig()
    ccc_compat: bool = False
    train_dir: str = ""
    val_dir: str = ""
    ckpt_dir: str = ""

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        # epochs = 0 is an allowed degenerate run: emit the initial
        # checkpoint and stop
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.T < 1:
            raise ValidationError(f"T must be >= 1, got {self.T}")
        if self.eval_every < 1:
            raise ValidationError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.grad_accum < 1:
            raise ValidationError(f"grad_accum must be >= 1, got {self.grad_accum}")
        if self.task != self.model.task:
            raise ValidationError(
                f"train.task ({self.task}) disagrees with model task ({self.model.task})"
            )
        if self.model.t_max < self.T:
            raise ValidationError(f"model t_max {self.model.t_max} smaller than T {self.T}")


def read_config_file(path: str | Path) -> dict[str, str]:
    """INI file -> flat {"section.key": raw string} mapping."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case, e.g. train.T
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config file {path}: {e}") from e
    flat: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            flat[f"{section}.{key}"] = value
    return flat


def parse_overrides(argv: list[str]) -> dict[str, str]:
    """['--mask.p', '0.2', ...] -> {'mask.p': '0.2'}; strict pairing."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(argv):
        arg = argv[i]
        if not arg.startswith("--"):
            raise ConfigError(f"unexpected argument {arg!r}")
        key = arg[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(argv):
                raise ConfigError(f"flag --{key} is missing a value")
            value = argv[i + 1]
            i += 1
        overrides[key] = value
        i += 1
    return overrides


def resolve(file_kv: dict[str, str], overrides: dict[str, str]) -> dict:
    """Merge file values and CLI overrides onto the schema defaults."""
    merged: dict[str, str] = dict(file_kv)
    merged.update(overrides)
    values: dict = {key: default for key, (_, default) in SCHEMA.items()}
    for key, raw in merged.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key '{key}'")
        parse, _ = SCHEMA[key]
        try:
            values[key] = parse(raw) if isinstance(raw, str) else raw
        except ValueError as e:
            raise ConfigError(f"bad value for '{key}': {e}") from e
    return values


def build_train_config(values: dict) -> TrainConfig:
    try:
        model = ModelConfig(
            task=values["train.task"],
            dim_in=values["model.dim_in"],
            d_model=values["model.d_model"],
            n_heads=values["model.n_heads"],
            n_layers=values["model.n_layers"],
            d_ff=values["model.d_ff"],
            dropout=values["model.dropout"],
            t_max=values["train.T"],
        )
        return TrainConfig(
            task=values["train.task"],
            batch_size=values["train.batch_size"],
            T=values["train.T"],
            epochs=values["train.epochs"],
            eval_every=values["train.eval_every"],
            seed=values["train.seed"],
            grad_accum=values["train.grad_accum"],
            single_thread=values["train.single_thread"],
            mask=MaskConfig(
                p=values["mask.p"],
                seed=values["mask.seed"],
                replacement=values["mask.replacement"],
            ),
            model=model,
            optim=AdamWConfig(
                lr=values["optim.lr"],
                weight_decay=values["optim.weight_decay"],
                beta1=values["optim.beta1"],
                beta2=values["optim.beta2"],
                eps=values["optim.eps"],
            ),
            loss=FocalConfig(alpha=values["loss.alpha"], gamma=values["loss.gamma"]),
            ccc_compat=values["loss.ccc_compat"],
            train_dir=values["paths.train_dir"],
            val_dir=values["paths.val_dir"],
            ckpt_dir=values["paths.ckpt_dir"],
        )
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def build_synth_spec(values: dict) -> SynthSpec:
    try:
        return SynthSpec(
            task=values["synth.task"],
            n_videos=values["synth.n_videos"],
            frames=values["synth.frames"],
            dim=values["synth.dim"],
            seed=values["synth.seed"],
            snr=values["synth.snr"],
            temporal_smoothness=values["synth.temporal_smoothness"],
            class_imbalance=values["synth.class_imbalance"],
            sentinel_rate=values["synth.sentinel_rate"],
            shuffle_frames=values["synth.shuffle_frames"],
            video_offset=values["synth.video_offset"],
        )
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_train_config(path: str | None, overrides: dict[str, str]) -> TrainConfig:
    file_kv = read_config_file(path) if path else {}
    return build_train_config(resolve(file_kv, overrides))


def load_synth_spec(path: str | None, overrides: dict[str, str]) -> SynthSpec:
    file_kv = read_config_file(path) if path else {}
    return build_synth_spec(resolve(file_kv, overrides))

"""Line-based run configuration files.

The format is `[section]` headers over `key = value` lines with `#`
comments. Every key has a documented default, unknown keys are rejected
with their line number, and parse -> serialize -> parse is idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .data import AugmentationConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .objective import DecaySchedule
from .trainer import TrainConfig

# (section, key) -> (type tag, default). Types: int, float, bool, str, int_list.
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "data": {
        "kind": ("str", "gaussian_mixture"),       # gaussian_mixture | cifar10
        "num_classes": ("int", 8),
        "per_class": ("int", 200),
        "dim": ("int", 32),
        "separation": ("float", 6.0),
        "cifar_dir": ("str", ""),
        "noise_std": ("float", 2.0),
        "scale_min": ("float", 0.8),
        "scale_max": ("float", 1.2),
        "mask_prob": ("float", 0.2),
        "crop_area_min": ("float", 0.08),
        "crop_area_max": ("float", 1.0),
        "flip_prob": ("float", 0.5),
        "jitter_prob": ("float", 0.8),
        "jitter_strength": ("float", 0.4),
        "hue_delta": ("float", 0.1),
        "grayscale_prob": ("float", 0.2),
        "blur_prob": ("float", 0.5),
    },
    "model": {
        "hidden_dims": ("int_list", [64, 64]),
        "embedding_dim": ("int", 4),
    },
    "objective": {
        "loss": ("str", "carl"),                   # carl | infonce
        "num_prototypes": ("int", 64),
        "lambda_start": ("float", 2.0),            # schedule start value b
        "lambda_end": ("float", 1.0),              # schedule end value a
        "decay_epochs": ("int", 70),
        "temperature": ("float", 0.2),
        "normalize_energies": ("bool", False),
    },
    "trainer": {
        "epochs": ("int", 100),
        "batch_size": ("int", 128),
        "lr_start": ("float", 0.1),
        "lr_end": ("float", 0.0001),
        "momentum": ("float", 0.9),
        "weight_decay": ("float", 0.0005),
    },
    "eval": {
        "probe_epochs": ("int", 50),
        "probe_lr": ("float", 0.03),
        "probe_batch_size": ("int", 256),
        "probe_seeds": ("int", 3),
        "test_fraction": ("float", 0.2),
    },
}

SECTION_ORDER = ("data", "model", "objective", "trainer", "eval")


@dataclass
class RunConfig:
    """Nested dict of resolved values, one entry per schema key."""

    values: dict[str, dict[str, object]]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        self.values[section][key] = _coerce(SCHEMA[section][key][0], str(value),
                                            section, key, line=None)


def default_config() -> RunConfig:
    values = {section: {key: entry[1] for key, entry in keys.items()}
              for section, keys in SCHEMA.items()}
    return RunConfig(values=values)


def _coerce(type_tag: str, text: str, section: str, key: str, line: int | None):
    try:
        if type_tag == "int":
            return int(text)
        if type_tag == "float":
            return float(text)
        if type_tag == "bool":
            lowered = text.strip().lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if type_tag == "int_list":
            return [int(part) for part in text.split(",") if part.strip()]
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"bad {type_tag} value for {section}.{key}: {text!r}",
                          line=line) from exc


def parse_config_text(text: str) -> RunConfig:
    config = default_config()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", line=lineno)
        if section is None:
            raise ConfigError("key outside any [section]", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", line=lineno)
        config.values[section][key] = _coerce(SCHEMA[section][key][0], value.strip(),
                                              section, key, lineno)
    return config


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def serialize_config(config: RunConfig) -> str:
    lines = []
    for section in SECTION_ORDER:
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            value = config.values[section][key]
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, list):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(serialize_config(config))


def to_train_config(config: RunConfig, seed: int) -> TrainConfig:
    """Materialize the dataclasses the trainer consumes."""
    data = config.values["data"]
    model = config.values["model"]
    objective = config.values["objective"]
    trainer = config.values["trainer"]

    mode = "image" if data["kind"] == "cifar10" else "vector"
    augmentation = AugmentationConfig(
        mode=mode,
        noise_std=data["noise_std"],
        scale_range=(data["scale_min"], data["scale_max"]),
        mask_prob=data["mask_prob"],
        crop_scale_range=(data["crop_area_min"], data["crop_area_max"]),
        flip_prob=data["flip_prob"],
        jitter_prob=data["jitter_prob"],
        jitter_strength=data["jitter_strength"],
        hue_delta=data["hue_delta"],
        grayscale_prob=data["grayscale_prob"],
        blur_prob=data["blur_prob"],
    )
    input_dim = 3072 if data["kind"] == "cifar10" else data["dim"]
    encoder = EncoderConfig(input_dim=input_dim,
                            hidden_dims=list(model["hidden_dims"]),
                            embedding_dim=model["embedding_dim"],
                            seed=seed)
    schedule = DecaySchedule(a=objective["lambda_end"],
                             b=objective["lambda_start"],
                             E=objective["decay_epochs"])
    return TrainConfig(
        epochs=trainer["epochs"],
        batch_size=trainer["batch_size"],
        num_prototypes=objective["num_prototypes"],
        schedule=schedule,
        encoder=encoder,
        augmentation=augmentation,
        lr_start=trainer["lr_start"],
        lr_end=trainer["lr_end"],
        momentum=trainer["momentum"],
        weight_decay=trainer["weight_decay"],
        loss_kind=objective["loss"],
        tau=objective["temperature"],
        normalize_energies=objective["normalize_energies"],
        seed=seed,
    )


def resolve_sweep_key(key: str) -> tuple[str, str]:
    """Map a `--vary` key to (section, key); bare keys must be unambiguous."""
    if key == "schedule":
        return ("objective", "schedule")
    if "." in key:
        section, _, name = key.partition(".")
        if section in SCHEMA and name in SCHEMA[section]:
            return (section, name)
        raise ConfigError(f"unknown config key {key!r}")
    owners = [section for section, keys in SCHEMA.items() if key in keys]
    if len(owners) == 1:
        return (owners[0], key)
    if not owners:
        raise ConfigError(f"unknown config key {key!r}")
    raise ConfigError(f"ambiguous key {key!r}; qualify as section.key")

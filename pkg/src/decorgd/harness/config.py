"""Run configuration: dataclass, ``key = value`` config files and architecture presets.

Config files are INI-style.  Section names only group keys for readability,
so every key is unique across sections and maps 1:1 to a :class:`RunConfig`
field and to a ``--kebab-case`` CLI flag.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from ..convops import conv_output_size
from ..network import Conv, Dense, MaxPool

SECTIONS = {
    "data": ("dataset", "data_path", "n_samples", "dim", "classes", "rho", "cov_kind",
             "test_samples", "teacher_seed", "val_count"),
    "model": ("arch", "loss", "gain_mode", "mu_rate"),
    "train": ("credit", "np_sigma", "optimizer", "lr", "decor_lr", "preset", "batch_size",
              "epochs", "seeds", "eval_batch_size"),
    "output": ("out", "checkpoint"),
}


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "synthetic"
    data_path: str = ""
    n_samples: int = 5000
    dim: int = 64
    classes: int = 10
    rho: float = 0.9
    cov_kind: str = "toeplitz"
    test_samples: int = 1000
    teacher_seed: int = 0
    val_count: int = 0
    arch: str = "fc:128,fc:128,fc:128"
    loss: str = "cce"
    gain_mode: str = "unit"
    mu_rate: float = 0.1
    credit: str = "bp"
    np_sigma: float = 1e-3
    optimizer: str = "adam"
    lr: float = 1e-3
    decor_lr: float = 0.0
    preset: str = ""
    batch_size: int = 256
    epochs: int = 50
    seeds: tuple = (0,)
    eval_batch_size: int = 2000
    out: str = ""
    checkpoint: bool = True

    def __post_init__(self):
        if self.lr < 0 or self.decor_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.credit not in ("bp", "fa", "np"):
            raise ValueError(f"credit must be bp, fa or np, got {self.credit!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @property
    def decorrelated(self) -> bool:
        return self.decor_lr > 0


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_value(key: str, text: str):
    kind = FIELD_TYPES[key]
    text = text.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {text!r}")
    if kind == "tuple":
        return tuple(int(s) for s in text.replace(" ", "").split(",") if s)
    return text


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def read_config(path, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        parser.read_file(fh)
    values = {}
    for section in parser.sections():
        for key, text in parser.items(section):
            if key not in FIELD_TYPES:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = parse_value(key, text)
    return replace(base or RunConfig(), **values)


def write_config(path, config: RunConfig) -> None:
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {format_value(getattr(config, k))}" for k in keys)
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


# -- architectures ---------------------------------------------------------------

DENSE_CIFAR = "fc:1000,fc:1000,fc:1000,fc:1000"
CONV_CIFAR = "conv:3:32:1:0,conv:3:32:1:0,pool:2:2,conv:3:64:1:0,conv:3:64:1:0,pool:2:2,fc:1000"
ARCH_PRESETS = {"dense-cifar": DENSE_CIFAR, "conv-cifar": CONV_CIFAR}

# forward (Adam) and decorrelation learning rates selected for the CIFAR runs
CIFAR_LEARNING_RATES = {
    ("cifar10-dense", "bp", False): (1e-4, 0.0),
    ("cifar10-dense", "bp", True): (1e-4, 1e-5),
    ("cifar10-dense", "fa", False): (1e-4, 0.0),
    ("cifar10-dense", "fa", True): (1e-4, 1e-6),
    ("cifar10-dense", "np", False): (1e-5, 0.0),
    ("cifar10-dense", "np", True): (1e-4, 1e-6),
    ("cifar10-conv", "bp", False): (1e-3, 0.0),
    ("cifar10-conv", "bp", True): (1e-3, 1e-5),
    ("cifar10-conv", "fa", False): (1e-4, 0.0),
    ("cifar10-conv", "fa", True): (1e-4, 1e-5),
    ("cifar100-conv", "bp", False): (1e-3, 0.0),
    ("cifar100-conv", "bp", True): (1e-3, 1e-5),
    ("cifar100-conv", "fa", False): (1e-4, 0.0),
    ("cifar100-conv", "fa", True): (1e-4, 1e-5),
    ("tinyimagenet-conv", "bp", False): (1e-3, 0.0),
    ("tinyimagenet-conv", "bp", True): (1e-3, 1e-5),
    ("tinyimagenet-conv", "fa", False): (1e-5, 0.0),
    ("tinyimagenet-conv", "fa", True): (1e-5, 1e-5),
}

GRID_LEARNING_RATES = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7)


def apply_preset(config: RunConfig) -> RunConfig:
    """Fill ``lr``/``decor_lr`` from ``preset = <task>[+decor]``, e.g. ``cifar10-dense+decor``."""
    if not config.preset:
        return config
    task, _, flag = config.preset.partition("+")
    key = (task, config.credit, flag == "decor")
    if key not in CIFAR_LEARNING_RATES:
        raise ValueError(f"no learning-rate preset for {key}")
    lr, decor_lr = CIFAR_LEARNING_RATES[key]
    return replace(config, lr=lr, decor_lr=decor_lr)


def parse_layers(arch: str, classes: int) -> list:
    """Hidden layers from a preset name or a token list, plus the output ``Dense(classes)``.

    Tokens: ``fc:N``, ``conv:K:C_out[:stride[:pad]]``, ``pool:K[:stride]``.
    Input sizes are filled in by :func:`build_specs`.
    """
    text = ARCH_PRESETS.get(arch, arch)
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    layers = []
    for tok in tokens:
        kind, *args = tok.split(":")
        nums = [int(a) for a in args]
        if kind == "fc" and len(nums) == 1:
            layers.append(("fc", nums[0]))
        elif kind == "conv" and 2 <= len(nums) <= 4:
            k, c, s, p = nums + [1, 0][len(nums) - 2:]
            layers.append(("conv", k, c, s, p))
        elif kind == "pool" and 1 <= len(nums) <= 2:
            k = nums[0]
            layers.append(("pool", k, nums[1] if len(nums) == 2 else k))
        else:
            raise ValueError(f"bad layer token {tok!r}")
    layers.append(("out", classes))
    return layers


def build_specs(arch: str, input_shape: tuple, classes: int) -> list:
    specs = []
    shape = tuple(input_shape)
    for item in parse_layers(arch, classes):
        kind = item[0]
        if kind in ("fc", "out"):
            n_in = 1
            for s in shape:
                n_in *= s
            act = "identity" if kind == "out" else "relu"
            specs.append(Dense(n_in, item[1], act))
            shape = (item[1],)
        elif kind == "conv":
            _, k, c, s, p = item
            if len(shape) != 3:
                raise ValueError("conv layers need image input")
            specs.append(Conv(k, shape[0], c, s, p))
            shape = (c, conv_output_size(shape[1], k, s, p), conv_output_size(shape[2], k, s, p))
        else:
            _, k, s = item
            if len(shape) != 3:
                raise ValueError("pool layers need image input")
            specs.append(MaxPool(k, s))
            shape = (shape[0], conv_output_size(shape[1], k, s, 0),
                     conv_output_size(shape[2], k, s, 0))
    return specs

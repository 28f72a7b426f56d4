"""Flat key = value run configuration with a documented default per key.

Unknown keys are a hard error so typos cannot silently change experiments.
parse -> serialize -> parse is a fixed point.
"""

from __future__ import annotations

import math


class ConfigError(ValueError):
    pass


def _parse_bool(s):
    if s in ("on", "true", "1", "yes"):
        return True
    if s in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"expected on/off, got {s!r}")


def _parse_int_list(s):
    if not s:
        return ()
    try:
        return tuple(int(t.strip()) for t in s.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated ints, got {s!r}") from None


def _fmt(value):
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _enum(*choices):
    def parse(s):
        if s not in choices:
            raise ConfigError(f"expected one of {choices}, got {s!r}")
        return s
    return parse


# key -> (default, parser, doc)
SCHEMA = {
    "variant": ("pepsi", _enum("pepsi", "diet_pepsi"), "generator variant"),
    "cam_mode": ("euclidean", _enum("cosine", "euclidean"), "attention similarity"),
    "dpu_rates": ((1, 2, 4, 8), _parse_int_list, "Diet unit dilation rates"),
    "groups": (1, int, "group count for Diet unit convolutions"),
    "channel_div": (1, int, "divide all channel counts (desk-scale runs)"),
    "image_size": (256, int, "square input size, divisible by 8"),
    "batch_size": (8, int, "images per training step"),
    "k_max": (1000000, int, "iteration horizon"),
    "seed": (0, int, "master seed; batches and masks derive from (seed, k)"),
    "lambda_i": (10.0, float, "inpainting L1 weight"),
    "lambda_c": (5.0, float, "coarse L1 weight (decays to 0 over k_max)"),
    "lambda_adv": (0.1, float, "adversarial weight"),
    "lr_g": (1e-4, float, "generator learning rate"),
    "lr_d": (4e-4, float, "discriminator learning rate"),
    "softmax_scale": (10.0, float, "attention softmax scale"),
    "coarse_path": (True, _parse_bool, "train the coarse decoder path"),
    "mask_mode": ("freeform", _enum("square", "freeform"), "training hole type"),
    "data_dir": ("", str, "PPM image directory; empty = synthetic data"),
    "synth_pattern": ("stripes", _enum("stripes", "checker", "gradient-blobs"),
                      "pattern when data_dir is empty"),
    "train_count": (200, int, "synthetic training images"),
    "eval_count": (16, int, "held-out evaluation pairs"),
    "checkpoint_interval": (500, int, "steps between checkpoints"),
    "eval_interval": (200, int, "steps between metric-log rows"),
}


class Config:
    """Immutable-ish mapping over SCHEMA keys."""

    def __init__(self, **overrides):
        self._values = {k: spec[0] for k, spec in SCHEMA.items()}
        for k, v in overrides.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r}")
            self._values[k] = v
        self._validate()

    def _validate(self):
        v = self._values
        if v["image_size"] % 8 or v["image_size"] < 8:
            raise ConfigError("image_size must be a positive multiple of 8")
        if v["k_max"] < 1 or v["batch_size"] < 1:
            raise ConfigError("k_max and batch_size must be positive")
        if v["groups"] not in (1, 2, 4):
            raise ConfigError("groups must be 1, 2 or 4")
        if not v["softmax_scale"] > 0:
            raise ConfigError("softmax_scale must be positive")
        for key in ("lr_g", "lr_d"):
            if v[key] < 0 or not math.isfinite(v[key]):
                raise ConfigError(f"{key} must be nonnegative and finite")

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key) from None

    def replace(self, **overrides):
        values = dict(self._values)
        values.update(overrides)
        return Config(**values)

    def serialize(self):
        lines = [f"{k} = {_fmt(self._values[k])}" for k in SCHEMA]
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        return isinstance(other, Config) and self._values == other._values


def parse_config(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = SCHEMA[key][1](val)
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from None
    return Config(**values)


def load_config(path):
    return parse_config(open(path, "r", encoding="utf-8").read())


def save_config(path, cfg):
    with open(path, "w", encoding="utf-8") as f:
        f.write(cfg.serialize())

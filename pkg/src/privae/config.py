"""Run configuration: a line-oriented ``key = value`` file with ``[section]`` headers.

Keys are case-insensitive. ``#`` starts a comment. Every problem is
reported with the line it was found on.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import Dataset, load_dataset, pinwheel, read_header, synth_images
from .divergences import DEFAULT_SCALES, DivergenceSpec
from .dp import MODES, ClipConfig
from .priors import GaussMixture, SpikeSlab, StandardNormal


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def _float(s: str) -> float:
    v = float(s)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _int(s: str) -> int:
    if not re.fullmatch(r"[+-]?\d+", s):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(s)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(s: str) -> tuple:
    return tuple(_float(p) for p in s.split(",") if p.strip())


def _ints(s: str) -> tuple:
    return tuple(_int(p.strip()) for p in s.split(",") if p.strip())


def _choice(*options):
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


# key -> (section, parser, default, range check or None)
_SCHEMA = {
    "source": ("data", _choice("pinwheel", "images", "file"), "pinwheel", None),
    "path": ("data", str, "", None),
    "n": ("data", _int, 400, lambda v: v >= 1),
    "arms": ("data", _int, 4, lambda v: v >= 1),
    "radial_std": ("data", _float, 0.3, lambda v: v >= 0),
    "tangential_std": ("data", _float, 0.05, lambda v: v >= 0),
    "rate": ("data", _float, 0.25, None),
    "side": ("data", _int, 8, lambda v: v >= 4),
    "data_seed": ("data", _int, 0, lambda v: v >= 0),
    "likelihood": ("data", _choice("gaussian", "bernoulli"), "gaussian", None),
    "hidden": ("model", _ints, (64, 64), lambda v: len(v) == 2 and min(v) >= 1),
    "latent_dim": ("model", _int, 2, lambda v: v >= 1),
    "type": (None, str, None, None),  # both [prior] and [divergence]; resolved per section
    "gamma": ("prior", _float, 0.8, lambda v: 0 <= v <= 1),
    "sigma0_sq": ("prior", _float, 0.05, lambda v: v > 0),
    "components": ("prior", _int, 4, lambda v: v >= 1),
    "component_std": ("prior", _float, 0.03, lambda v: v > 0),
    "alpha": ("divergence", _float, 0.0, lambda v: v >= 0),
    "scales": ("divergence", _floats, DEFAULT_SCALES, lambda v: len(v) > 0 and min(v) > 0),
    "literal": ("divergence", _bool, False, None),
    "mode": ("training", _choice(*MODES), "termwise", None),
    "batch_size": ("training", _int, 20, lambda v: v >= 1),
    "partitions": ("training", _int, 1, lambda v: v >= 1),
    "l": ("training", _int, 1, lambda v: v >= 1),
    "beta": ("training", _float, 1.0, lambda v: v >= 0),
    "c": ("training", _float, 0.05, lambda v: v > 0),
    "c1": ("training", _float, 0.05, lambda v: v > 0),
    "c2": ("training", _float, 0.0, lambda v: v >= 0),
    "lr": ("training", _float, 0.01, lambda v: v >= 0),
    "epochs": ("training", _int, 1, lambda v: v >= 0),
    "seed": ("training", _int, 0, lambda v: v >= 0),
    "epsilon": ("privacy", _float, None, lambda v: v > 0),
    "delta": ("privacy", _float, 1e-5, lambda v: 0 < v < 1),
    "c2_const": ("privacy", _float, 1.0, lambda v: v > 0),
    "sigma": ("privacy", _float, None, lambda v: v >= 0),
    "n_eval": ("eval", _int, 2048, lambda v: v >= 2),
    "eval_l": ("eval", _int, 1, lambda v: v >= 1),
}
_SECTION_TYPES = {
    "prior": ("prior_type", _choice("standard_normal", "spike_slab", "gauss_mixture"), "standard_normal"),
    "divergence": ("divergence_type", _choice("none", "mmd", "reverse_kl"), "none"),
}
SECTIONS = ("data", "model", "prior", "divergence", "training", "privacy", "eval")


@dataclass
class RunConfig:
    source: str = "pinwheel"
    path: str = ""
    n: int = 400
    arms: int = 4
    radial_std: float = 0.3
    tangential_std: float = 0.05
    rate: float = 0.25
    side: int = 8
    data_seed: int = 0
    likelihood: str = "gaussian"
    hidden: tuple = (64, 64)
    latent_dim: int = 2
    prior_type: str = "standard_normal"
    gamma: float = 0.8
    sigma0_sq: float = 0.05
    components: int = 4
    component_std: float = 0.03
    divergence_type: str = "none"
    alpha: float = 0.0
    scales: tuple = DEFAULT_SCALES
    literal: bool = False
    mode: str = "termwise"
    batch_size: int = 20
    partitions: int = 1
    l: int = 1
    beta: float = 1.0
    c: float = 0.05
    c1: float = 0.05
    c2: float = 0.0
    lr: float = 0.01
    epochs: int = 1
    seed: int = 0
    epsilon: float | None = None
    delta: float = 1e-5
    c2_const: float = 1.0
    sigma: float | None = None
    n_eval: int = 2048
    eval_l: int = 1
    lines: dict = field(default_factory=dict, repr=False, compare=False)
    source_name: str = field(default="<config>", repr=False, compare=False)

    # -- derived objects --------------------------------------------------
    def prior(self):
        D = self.latent_dim
        if self.prior_type == "standard_normal":
            return StandardNormal(D)
        if self.prior_type == "spike_slab":
            return SpikeSlab(D, self.gamma, self.sigma0_sq)
        return GaussMixture.corners(self.components, D, self.component_std)

    def divergence(self) -> DivergenceSpec:
        return DivergenceSpec(self.divergence_type, self.alpha, self.scales, self.literal)

    def clip_config(self) -> ClipConfig:
        return ClipConfig(c1=self.c1, c2=self.c2, c=self.c)

    def dataset_size(self) -> int:
        if self.source == "file":
            return read_header(self.path)[0]
        return self.n

    def load_data(self) -> Dataset:
        if self.source == "pinwheel":
            return pinwheel(self.n, self.arms, self.radial_std, self.tangential_std, self.rate, self.data_seed)
        if self.source == "images":
            return synth_images(self.n, self.side, self.data_seed)
        return load_dataset(self.path)

    def input_dim(self) -> int:
        if self.source == "pinwheel":
            return 2
        if self.source == "images":
            return self.side * self.side
        return read_header(self.path)[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("lines")
        d.pop("source_name")
        d["hidden"] = list(self.hidden)
        d["scales"] = list(self.scales)
        return d

    def replace(self, **changes) -> "RunConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        cfg = RunConfig(**d)
        cfg.validate()
        return cfg

    # -- validation -------------------------------------------------------
    def _fail(self, message: str, *keys: str):
        line = max((self.lines[k] for k in keys if k in self.lines), default=None)
        raise ConfigError(message, line, self.source_name)

    def validate(self) -> "RunConfig":
        for key, (_, _, _, check) in _SCHEMA.items():
            if key == "type" or check is None:
                continue
            v = getattr(self, key)
            if v is not None and not check(v):
                self._fail(f"value {v!r} out of range for {key!r}", key)
        if self.source == "file" and not self.path:
            self._fail("source = file requires a path", "source")
        if self.source == "pinwheel" and self.n % self.arms:
            self._fail(f"pinwheel: arms={self.arms} must divide n={self.n}", "arms", "n")
        B, b = self.batch_size, self.partitions
        if B % b:
            self._fail(f"number of partitions b={b} must divide batch size B={B}", "partitions", "batch_size")
        try:
            N = self.dataset_size()
        except (OSError, ValueError) as exc:
            self._fail(f"cannot read dataset: {exc}", "path")
        if B > N:
            self._fail(f"batch size B={B} exceeds dataset size N={N}", "batch_size")
        if self.c2 > 0 and self.divergence_type == "none":
            self._fail("C2 > 0 needs a divergence (set [divergence] type)", "c2")
        if self.mode == "batch" and self.divergence_type == "none":
            self._fail("batch aggregation needs a divergence term", "mode")
        if self.prior_type == "gauss_mixture" and self.components > 2**self.latent_dim:
            self._fail(
                f"gauss_mixture: {self.components} components exceed the {2 ** self.latent_dim} "
                f"corners of a {self.latent_dim}-dimensional cube",
                "components",
            )
        if self.epsilon is None and self.sigma is None:
            self._fail("either [privacy] epsilon or sigma must be given")
        return self


def parse_config_text(text: str, source: str = "<config>", base_dir=None) -> RunConfig:
    """Parse and validate config text; relative dataset paths resolve against ``base_dir``."""
    values: dict = {}
    lines: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]", line)
        if m:
            section = m.group(1).lower()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno, source)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        key, val = (p.strip() for p in line.split("=", 1))
        key = key.lower()
        if section is None:
            raise ConfigError(f"key {key!r} appears before any [section] header", lineno, source)
        if key == "type" and section in _SECTION_TYPES:
            name, parser, _ = _SECTION_TYPES[section]
        elif key in _SCHEMA and key != "type":
            name, (want, parser, _, _) = key, _SCHEMA[key]
            if want != section:
                raise ConfigError(f"key {key!r} belongs in [{want}], not [{section}]", lineno, source)
        else:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, source)
        if name in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[name]})", lineno, source)
        try:
            values[name] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, source) from None
        lines[name] = lineno
    if base_dir is not None and values.get("path") and not Path(values["path"]).is_absolute():
        values["path"] = str(Path(base_dir) / values["path"])
    cfg = RunConfig(**values, lines=lines, source_name=source)
    return cfg.validate()


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not valid UTF-8: {exc}", None, str(path)) from None
    return parse_config_text(text, source=str(path), base_dir=path.parent)

"""Flat key-value run configuration.

Config files are a TOML-compatible subset: one `key = value` per line,
`#` comments, dotted keys for grouping, and string / int / float / bool
values. Every run writes its resolved config next to its outputs so the
exact parameter set is always recoverable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(Exception):
    """Invalid configuration (bad key, bad value, impossible scenario)."""


@dataclass
class ScenarioConfig:
    name: str = "candy_poison"
    large: bool = False
    episode_length: int = 1000
    candies: int = 10
    poisons: int = 10
    fireballs: int = 3
    band_fireballs: int = 6


@dataclass
class SimConfig:
    move_step: float = 10.0
    turn_step_deg: float = 15.0
    agent_radius: float = 10.0
    fireball_speed: float = 4.0
    band_speed: float = 6.0


@dataclass
class SensorConfig:
    range: float = 400.0
    rays: int = 128
    occlusion: bool = True
    include_walls: bool = False


@dataclass
class GraphConfig:
    mode: str = "full"  # "full" | "knn"
    k: int = 2
    agent_node: bool = True
    self_loops: bool = False


@dataclass
class SlotConfig:
    k: int = 4
    t: int = 3
    dim: int = 32
    mlp_hidden: int = 64


@dataclass
class GatConfig:
    layers: int = 2
    heads: int = 4
    hidden: int = 16
    edge_kinds: bool = False


@dataclass
class CnnConfig:
    channels: str = "16,32"
    kernels: str = "8,4"
    strides: str = "4,2"
    fc: int = 256


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 256
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    horizon: int = 1024
    workers: int = 8
    normalize_advantages: bool = True

    def validate(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"ppo.gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"ppo.lam must be in [0, 1], got {self.lam}")
        if self.clip_eps <= 0.0:
            raise ConfigError(f"ppo.clip_eps must be > 0, got {self.clip_eps}")
        if self.horizon < 1 or self.workers < 1:
            raise ConfigError("ppo.horizon and ppo.workers must be >= 1")


@dataclass
class TrainConfig:
    eval_interval: int = 65536
    eval_episodes: int = 20


@dataclass
class RunConfig:
    """Fully resolved configuration for one train/eval run."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    slots: SlotConfig = field(default_factory=SlotConfig)
    gat: GatConfig = field(default_factory=GatConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: str = "gnn"  # "cnn" | "slot" | "gnn"
    latent_dim: int = 64
    seed: int = 0
    steps: int = 0

    def validate(self) -> None:
        if self.scenario.name not in SCENARIO_NAMES:
            raise ConfigError(
                f"unknown scenario {self.scenario.name!r}; expected one of {sorted(SCENARIO_NAMES)}"
            )
        if self.encoder not in ("cnn", "slot", "gnn"):
            raise ConfigError(f"unknown encoder {self.encoder!r}; expected cnn, slot or gnn")
        if self.graph.mode not in ("full", "knn"):
            raise ConfigError(f"graph.mode must be 'full' or 'knn', got {self.graph.mode!r}")
        if self.graph.k < 1:
            raise ConfigError(f"graph.k must be >= 1, got {self.graph.k}")
        if self.sensor.rays < 1:
            raise ConfigError(f"sensor.rays must be >= 1, got {self.sensor.rays}")
        self.ppo.validate()


SCENARIO_NAMES = {"candy_poison", "candy_fireballs", "dispenser_fireballs"}

# flat key -> (section attribute on RunConfig or "" for top level, field name)
_SECTIONS = {
    "scenario": ScenarioConfig,
    "sim": SimConfig,
    "sensor": SensorConfig,
    "graph": GraphConfig,
    "slots": SlotConfig,
    "gat": GatConfig,
    "cnn": CnnConfig,
    "ppo": PPOConfig,
    "train": TrainConfig,
}
_TOP_LEVEL = {"encoder": str, "latent_dim": int, "seed": int, "steps": int}


def _known_keys() -> dict[str, type]:
    keys: dict[str, type] = {}
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            keys[f"{section}.{f.name}"] = f.type if isinstance(f.type, type) else _TYPE_NAMES[f.type]
    keys.update(_TOP_LEVEL)
    # `scenario = "candy_poison"` is shorthand for `scenario.name`
    keys["scenario"] = str
    return keys


_TYPE_NAMES = {"str": str, "int": int, "float": float, "bool": bool}
KNOWN_KEYS = _known_keys()


def parse_value(text: str, lineno: int = 0) -> str | int | float | bool:
    """Parse a single config value: quoted string, bool, int or float."""
    text = text.strip()
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse value {text!r}") from None


def parse_config_text(text: str) -> dict[str, str | int | float | bool]:
    """Parse flat `key = value` lines into a dict (keys unvalidated)."""
    out: dict[str, str | int | float | bool] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = parse_value(value, lineno)
    return out


def _coerce(key: str, value, want: type):
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is bool and not isinstance(value, bool):
        raise ConfigError(f"key {key!r} expects true/false, got {value!r}")
    if not isinstance(value, want) or (want is int and isinstance(value, bool)):
        raise ConfigError(f"key {key!r} expects {want.__name__}, got {value!r}")
    return value


def apply_keys(cfg: RunConfig, items: dict[str, str | int | float | bool]) -> RunConfig:
    """Apply flat keys to a RunConfig copy; unknown keys fail fast by name."""
    cfg = replace(
        cfg,
        **{s: replace(getattr(cfg, s)) for s in _SECTIONS},
    )
    for key, value in items.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        want = KNOWN_KEYS[key]
        value = _coerce(key, value, want)
        if key == "scenario":
            cfg.scenario.name = value
        elif key in _TOP_LEVEL:
            setattr(cfg, key, value)
        else:
            section, _, name = key.partition(".")
            setattr(getattr(cfg, section), name, value)
    return cfg


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    """Load a config file on top of defaults (or `base`) and validate."""
    cfg = apply_keys(base or RunConfig(), parse_config_text(Path(path).read_text()))
    cfg.validate()
    return cfg


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig to the flat key-value format (round-trips)."""
    lines = []
    for key in sorted(_TOP_LEVEL):
        lines.append(f"{key} = {_format_value(getattr(cfg, key))}")
    for section in _SECTIONS:
        for f in fields(_SECTIONS[section]):
            value = getattr(getattr(cfg, section), f.name)
            lines.append(f"{section}.{f.name} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(format_config(cfg))


def parse_int_list(text: str, key: str) -> list[int]:
    """Parse comma-separated ints, e.g. cnn.channels = "16,32"."""
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"key {key!r} expects comma-separated ints, got {text!r}") from None

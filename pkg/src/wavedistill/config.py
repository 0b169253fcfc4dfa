"""Run configuration: one INI file covering every component, plus overrides.

Sections ``[run]``, ``[synth]``, ``[network]``, ``[degrade]`` and ``[train]``
map onto :class:`RunConfig`, :class:`~wavedistill.data.SynthSpec`,
:class:`~wavedistill.nets.NetworkSpec`,
:class:`~wavedistill.degrade.DegradationConfig` and
:class:`~wavedistill.train.TrainConfig`.  Sequence values are written
comma-separated.  Precedence, lowest first: dataclass defaults, config file,
the ``WAVEDISTILL_OUT`` environment variable (output root only), command-line
flags.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthSpec
from .degrade import DegradationConfig
from .nets import NetworkSpec
from .train import TrainConfig

ENV_OUT = "WAVEDISTILL_OUT"
SECTIONS = {"synth": "synth", "network": "network", "degrade": "degrade", "train": "train"}


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs"
    deterministic: bool = False
    threads: int = 1
    synth: SynthSpec = field(default_factory=SynthSpec)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    degrade: DegradationConfig = field(default_factory=DegradationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def resolved(self):
        """Propagate the root seed to every component and validate."""
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        self.synth.seed = self.seed
        self.train.seed = self.seed
        self.network.num_classes = self.synth.num_identities
        self.network.input_size = self.synth.image_size
        self.synth.validate()
        self.network.validate()
        self.degrade.validate(self.synth.image_size)
        self.train.validate()
        return self

    @property
    def workers(self):
        return 1 if self.deterministic else self.threads


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text, like):
    """Parse ``text`` into the type of the default value ``like``."""
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(like, (list, tuple)):
        elem = like[0] if len(like) else 0.0
        vals = [_parse(t, elem) for t in text.split(",") if t.strip()]
        return type(like)(vals)
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def _apply(obj, items, section):
    known = {f.name for f in dataclasses.fields(obj)}
    for key, text in items:
        if key not in known:
            raise ValueError(f"unknown key {key!r} in [{section}]")
        setattr(obj, key, _parse(text, getattr(obj, key)))


def to_ini(cfg):
    """Serialize ``cfg`` as INI text (every field, fixed order)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["run"] = {k: _format(getattr(cfg, k)) for k in ("seed", "out", "deterministic", "threads")}
    for section, attr in SECTIONS.items():
        obj = getattr(cfg, attr)
        parser[section] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in parser[section].items())
        lines.append("")
    return "\n".join(lines)


def from_ini(text, base=None):
    """Overlay INI ``text`` onto ``base`` (a fresh default config when omitted)."""
    cfg = base if base is not None else RunConfig()
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    for section in parser.sections():
        if section == "run":
            _apply(cfg, parser.items(section), section)
        elif section in SECTIONS:
            _apply(getattr(cfg, SECTIONS[section]), parser.items(section), section)
        else:
            raise ValueError(f"unknown config section [{section}]")
    return cfg


def load_config(path=None, env=None, overrides=None):
    """Build a resolved :class:`RunConfig` from file, environment and overrides.

    ``overrides`` maps ``"section.key"`` (or a bare ``[run]`` key) to a value;
    ``None`` values are ignored so unset flags fall through.
    """
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found at {p}")
        from_ini(p.read_text(encoding="utf-8"), cfg)
    env = os.environ if env is None else env
    if env.get(ENV_OUT):
        cfg.out = env[ENV_OUT]
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = key.rpartition(".")
        target = cfg if not section or section == "run" else getattr(cfg, SECTIONS[section])
        if not hasattr(target, name):
            raise ValueError(f"unknown override {key!r}")
        setattr(target, name, value)
    return cfg.resolved()


def save_config(cfg, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(to_ini(cfg), encoding="utf-8", newline="\n")

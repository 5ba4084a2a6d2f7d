"""Sectioned ``key = value`` run configuration with desk-scale defaults.

Sections are ``[data]``, ``[spkemb]``, ``[vc]``, ``[psg]`` and ``[eval]``.  ``[vc]``
holds the stage-2 weights; stage-1 overrides use the ``stage1_`` prefix.  Lines
starting with ``#`` or ``;`` are comments.  Unknown sections or keys are
rejected with their line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    train_speakers: int = 8
    test_speakers: int = 4
    utts_per_speaker: int = 14
    utt_seconds: float = 2.5
    # test corpus seed = --seed + this offset; speaker ids embed the seed so the sets are disjoint
    test_seed_offset: int = 1000


@dataclass
class SpkembSection:
    steps: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    crop_frames: int = 125
    channels: int = 128
    adversary_seed_offset: int = 1


@dataclass
class VcSection:
    mu: float = 1.0
    lambda_: float = 10.0
    alpha: float = 10.0
    beta: float = 10.0
    steps: int = 500
    batch_size: int = 16
    lr: float = 1e-4
    crop_frames: int = 128
    eval_every: int = 50
    stage1_mu: float = 1.0
    stage1_lambda_: float = 1.0
    stage1_steps: int = 2000
    stage1_lr: float = 1e-3


@dataclass
class PsgSection:
    lambda_dist: float = 200.0
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 128
    objective: str = "l1+dist"
    crops_per_utt: int = 16
    finetune_epochs: int = 20


@dataclass
class EvalSection:
    enroll_utts: int = 4
    enroll_crops: int = 10
    crop_frames: int = 125
    gl_iterations: int = 30


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    spkemb: SpkembSection = field(default_factory=SpkembSection)
    vc: VcSection = field(default_factory=VcSection)
    psg: PsgSection = field(default_factory=PsgSection)
    eval: EvalSection = field(default_factory=EvalSection)


SECTIONS = {f.name for f in fields(RunConfig)}


def _key_name(key: str) -> str:
    # ``lambda`` is a keyword; the dataclass field carries a trailing underscore
    return key + "_" if key in ("lambda", "stage1_lambda") else key


def _coerce(raw: str, typ, where: str):
    if typ in (int, "int"):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None
    if typ in (float, "float"):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from None
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        where = f"{source}:{lineno}"
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            name = s[1:-1].strip()
            if name not in SECTIONS:
                raise ConfigError(f"{where}: unknown section [{name}]")
            section = getattr(cfg, name)
            continue
        if "=" not in s:
            raise ConfigError(f"{where}: expected key = value, got {s!r}")
        if section is None:
            raise ConfigError(f"{where}: key outside of a section")
        key, value = (p.strip() for p in s.split("=", 1))
        types = {f.name: f.type for f in fields(section)}
        attr = _key_name(key)
        if attr not in types:
            raise ConfigError(f"{where}: unknown key {key!r} in [{_section_name(cfg, section)}]")
        setattr(section, attr, _coerce(value, types[attr], where))
    return cfg


def _section_name(cfg: RunConfig, section) -> str:
    return next(n for n in SECTIONS if getattr(cfg, n) is section)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config` (defaults included)."""
    out = []
    for name in ("data", "spkemb", "vc", "psg", "eval"):
        out.append(f"[{name}]")
        for f in fields(getattr(cfg, name)):
            key = f.name[:-1] if f.name.endswith("lambda_") else f.name
            out.append(f"{key} = {getattr(getattr(cfg, name), f.name)}")
        out.append("")
    return "\n".join(out)

"""Single-JSON-document run configuration.

Three sections (scenario, model, train) mirror the dataclasses they build.
Unknown keys anywhere are rejected with the list of valid keys; every
hyperparameter has its standard default, so an empty document is a valid
full-scale configuration and the desk preset just shrinks the widths.
"""

import dataclasses
import json

from .datagen import ScenarioConfig
from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig

_SECTIONS = {
    "scenario": ScenarioConfig,
    "model": ModelConfig,
    "train": TrainConfig,
}

DESK_OVERRIDES = {
    "model": {
        "fusion_dim": 64,
        "text_raw_dim": 32,
        "ts_raw_dim": 16,
        "align_heads": 4,
        "decoder_blocks": 2,
        "decoder_heads": 4,
        "decoder_dim": 64,
    },
    "scenario": {"lookback": 16},
}


@dataclasses.dataclass
class RunConfig:
    name: str
    scenario: ScenarioConfig
    model: ModelConfig
    train: TrainConfig


def _build_section(name, cls, payload):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - valid
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in section '{name}'; "
            f"valid keys: {sorted(valid)}"
        )
    try:
        return cls(**payload)
    except TypeError as exc:
        raise ConfigError(f"section '{name}': {exc}") from exc


def from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(doc) - set(_SECTIONS) - {"name"}
    if unknown:
        raise ConfigError(
            f"unknown top-level key(s) {sorted(unknown)}; "
            f"valid keys: {sorted(set(_SECTIONS) | {'name'})}"
        )
    sections = {}
    for key, cls in _SECTIONS.items():
        payload = doc.get(key, {})
        if not isinstance(payload, dict):
            raise ConfigError(f"section '{key}' must be a JSON object")
        sections[key] = _build_section(key, cls, payload)
    return RunConfig(name=doc.get("name", "synthetic"), **sections)


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    return from_dict(doc)


def default_config(preset="paper"):
    """Full default document as a dict; 'desk' shrinks widths for laptops."""
    doc = {"name": "synthetic"}
    for key, cls in _SECTIONS.items():
        doc[key] = dataclasses.asdict(cls())
    if preset == "desk":
        for section, overrides in DESK_OVERRIDES.items():
            doc[section].update(overrides)
        doc["scenario"]["horizon"] = doc["scenario"]["lookback"]
    elif preset != "paper":
        raise ConfigError(f"unknown preset {preset!r}; use 'paper' or 'desk'")
    return doc


def dump_config(doc, path=None):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is None:
        return text
    with open(path, "w") as fh:
        fh.write(text)
    return text

"""Flat run configuration and its text format.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Sequences are comma separated, booleans are ``true``/``false``::

    seed = 3
    steps = 400
    hidden_sizes = 256, 64
    ks = 1, 5, 10, 20

A ``manifest.json`` written by a previous run is accepted as well; its
``config`` object is used.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .mining import AugmentationSpec, TripletSpec
from .render import CanvasSpec
from .train import TrainConfig
from .data import SyntheticSpec

SEED_ENV = "POSE_TRIPLET_SEED"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    annotations: str = ""
    output_dir: str = "runs/desk"

    # synthetic data, used when no annotation file is given
    n_synthetic: int = 2000
    synth_prototypes: int = 64
    synth_angle_jitter: float = 12.0
    synth_body_height: float = 200.0
    root_index: int = 6

    n_train: int = 1000
    n_db: int = 800
    n_query: int = 200

    pos_threshold: float = 7.0
    pos_closest_count: int = 2
    neg_threshold: float = 15.0
    neg_cap: int = 5000

    aug_scale_min: float = 0.9
    aug_scale_max: float = 1.1
    aug_translation: float = 0.10

    canvas_side: int = 64
    line_width: float = 2.0
    canvas_margin: float = 0.1

    hidden_sizes: tuple = (256, 64)
    embedding_dim: int = 32
    activation: str = "tanh"
    normalize_output: bool = True
    batch_size: int = 64
    learning_rate: float = 0.05
    triplet_margin: float = 0.2
    steps: int = 400
    adagrad_epsilon: float = 1e-8

    ks: tuple = (1, 2, 5, 10, 20, 50)
    hit_threshold: float = 15.0
    relative_slack: float = 10.0
    fusion: bool = True
    fusion_noise_sigma: float = 16.0

    write_triplets: bool = False
    write_ranklists: bool = False
    n_renders: int = 0

    def __post_init__(self):
        if self.annotations == "" and self.n_train + self.n_db + self.n_query > self.n_synthetic:
            raise ValueError("split sizes exceed n_synthetic")
        if min(self.ks) < 1:
            raise ValueError("every K must be >= 1")
        # component invariants
        self.triplet_spec()
        self.augmentation()
        self.canvas()
        self.train_config()

    # derived seeds, one stream per stage
    @property
    def seeds(self) -> dict:
        return {
            "synthetic": self.seed,
            "split": self.seed + 1,
            "train": self.seed + 2,
            "augmentation": self.seed + 3,
            "random_baseline": self.seed + 4,
            "joint_noise": self.seed + 5,
        }

    def triplet_spec(self) -> TripletSpec:
        return TripletSpec(self.pos_threshold, self.pos_closest_count, self.neg_threshold, self.neg_cap)

    def augmentation(self) -> AugmentationSpec:
        return AugmentationSpec((self.aug_scale_min, self.aug_scale_max), self.aug_translation,
                                self.seeds["augmentation"])

    def canvas(self) -> CanvasSpec:
        return CanvasSpec(side=self.canvas_side, line_width=self.line_width, margin=self.canvas_margin)

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(n_prototypes=self.synth_prototypes, angle_jitter=self.synth_angle_jitter,
                             body_height=self.synth_body_height, root_index=self.root_index)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            margin=self.triplet_margin,
            steps=self.steps,
            seed=self.seeds["train"],
            adagrad_epsilon=self.adagrad_epsilon,
            hidden_sizes=tuple(self.hidden_sizes),
            embedding_dim=self.embedding_dim,
            activation=self.activation,
            normalize_output=self.normalize_output,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            lines.append(f"{key} = {format_value(value)}")
        return "\n".join(lines) + "\n"


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    return str(value)


_FIELD_TYPES = {f.name: f.default for f in fields(RunConfig)}


def parse_value(key: str, text: str):
    """Convert ``text`` to the type of ``RunConfig.<key>``'s default."""
    if key not in _FIELD_TYPES:
        raise KeyError(f"unknown config key {key!r}")
    default = _FIELD_TYPES[key]
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(int(p) for p in text.split(",") if p.strip())
    return text


def _coerce(key, value):
    if isinstance(value, str):
        return parse_value(key, value)
    if isinstance(_FIELD_TYPES.get(key), tuple):
        return tuple(value)
    return value


def read_config_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, value)
    return out


def load_config_values(path) -> dict:
    """Key/value overrides from a config text file or a run manifest."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        values = data.get("config", data)
        return {k: _coerce(k, v) for k, v in values.items()}
    return read_config_text(text)


def build_config(path=None, overrides: dict | None = None, seed: int | None = None,
                 environ=os.environ) -> RunConfig:
    """Defaults < config file < ``POSE_TRIPLET_SEED`` < explicit overrides < ``seed`` flag."""
    values = {}
    if path:
        values.update(load_config_values(path))
    if environ.get(SEED_ENV):
        values["seed"] = int(environ[SEED_ENV])
    for k, v in (overrides or {}).items():
        values[k] = _coerce(k, v)
    if seed is not None:
        values["seed"] = int(seed)
    return RunConfig(**values)

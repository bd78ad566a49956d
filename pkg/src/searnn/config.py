"""Flat ``key = value`` training configuration.

Blank lines and lines starting with ``#`` are ignored. Every key must name a
:class:`TrainConfig` field; values are converted to the field's type.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

from .engine import SamplerSpec
from .exceptions import ContractError, ParseError
from .losses import LossSpec
from .policies import PolicySpec
from .training import check_setup

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class TrainConfig:
    # data: either a directory written by gen-data, or generation parameters
    data: str = ""
    task: str = "spelling"
    p: float = 0.3
    alphabet_size: int = 17
    t_max: int = 8
    rule: str = "shift:1"
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 500
    data_seed: int = 0
    # model
    hidden: int = 32
    embedding: int = 16
    attention: bool = False
    # algorithm
    loss: str = "ll"
    alpha: float | None = None
    roll_in: str = "learned"
    roll_out: str = "mixed"
    mix_probability: float = 0.5
    reference: str = "copy"
    cells: int | None = None
    token_strategy: str = "all"
    k: int | None = None
    neighbor_window: int = 0
    cost: str = "edit"
    # optimization
    optimizer: str = "adam"
    lr: float = 0.001
    batch_size: int = 32
    rounds: int = 1000
    seed: int = 0
    eval_every: int = 50
    metric: str = "edit"
    keep_best: bool = True
    # outputs
    metrics: str = ""
    checkpoint: str = ""
    cost_dump: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.batch_size < 1 or self.rounds < 0 or self.eval_every < 1:
            raise ContractError("need batch_size >= 1, rounds >= 0 and eval_every >= 1")
        if self.hidden < 1 or self.embedding < 1:
            raise ContractError("hidden and embedding sizes must be >= 1")
        if self.task not in ("spelling", "transduce"):
            raise ContractError(f"task must be 'spelling' or 'transduce', got {self.task!r}")
        check_setup(self.loss_spec(), self.sampler_spec())
        self.policy_spec()

    def loss_spec(self) -> LossSpec:
        return LossSpec(self.loss, self.alpha)

    def policy_spec(self) -> PolicySpec:
        return PolicySpec(self.roll_in, self.roll_out, self.mix_probability, self.reference)

    def sampler_spec(self) -> SamplerSpec:
        return SamplerSpec(self.cells, self.token_strategy, self.k, self.neighbor_window)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if value is None else value}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _convert(key: str, raw: str):
    kind = _FIELDS[key].type
    optional = "None" in kind
    if optional and raw.lower() in ("", "none"):
        return None
    if kind.startswith("bool"):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw


def parse_assignments(lines: Iterable[str], label: str | None = None) -> dict:
    """Parse ``key = value`` lines; errors cite the line number, or ``label``."""
    values = {}
    for lineno, line in enumerate(lines, 1):
        where = {"line": lineno} if label is None else {}
        prefix = "" if label is None else f"{label}: "
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ParseError(f"{prefix}expected 'key = value', got {text!r}", **where)
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in _FIELDS:
            raise ParseError(f"{prefix}unknown config key {key!r}", **where)
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ParseError(f"{prefix}bad value for {key!r}: {exc}", **where) from None
    return values


def parse_config(text: str, overrides: Iterable[str] = ()) -> TrainConfig:
    """Build a config from file text plus ``key=value`` overrides (applied last)."""
    values = parse_assignments(text.splitlines())
    for item in overrides:
        values.update(parse_assignments([item], label=f"--set {item!r}"))
    return TrainConfig(**values)


def load_config(path, overrides: Iterable[str] = ()) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), overrides)

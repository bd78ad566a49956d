"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

from typing import Sequence

from .exceptions import ContractError, SequenceLengthError


def check_sequences(X, name="X", allow_empty=False) -> list[list[str]]:
    """Coerce X to a list of token lists.

    A plain string is split on whitespace; any other iterable is taken as
    its tokens, each converted with ``str``.
    """
    if isinstance(X, (str, bytes)):
        raise ContractError(f"{name} must be a sequence of sequences, not a single string")
    out = []
    for i, seq in enumerate(X):
        toks = seq.split() if isinstance(seq, str) else [str(t) for t in seq]
        if not toks and not allow_empty:
            raise ContractError(f"{name}[{i}] is empty")
        out.append(toks)
    if not out:
        raise ContractError(f"{name} has no sequences")
    return out


def check_pairs(X, y, max_len: int | None = None) -> tuple[list[list[str]], list[list[str]]]:
    """Validate aligned sources/targets; targets may be at most ``max_len`` tokens."""
    X = check_sequences(X, "X")
    y = check_sequences(y, "y")
    if len(X) != len(y):
        raise ContractError(f"X and y have different lengths ({len(X)} vs {len(y)})")
    if max_len is not None:
        for i, t in enumerate(y):
            if len(t) > max_len:
                raise SequenceLengthError(f"y[{i}] has {len(t)} tokens; the decoder emits at most {max_len}")
    return X, y


def check_positive_int(value, name, minimum=1) -> int:
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ContractError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_choice(value, name, choices: Sequence[str]) -> str:
    if value not in choices:
        raise ContractError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value

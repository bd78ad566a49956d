"""Synthetic desk-scale datasets and the TSV / manifest file formats.

TSV: one pair per line, ``source tokens<TAB>target tokens``, tokens separated
by single spaces. Manifest: ``key=value`` lines recording how a split was
generated.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ContractError, ParseError, VocabularyError
from .model import Vocabulary

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class SeqPair:
    source: tuple
    target: tuple

    def __init__(self, source, target):
        object.__setattr__(self, "source", tuple(source))
        object.__setattr__(self, "target", tuple(target))
        if not self.source or not self.target:
            raise ContractError("source and target must be non-empty")


@dataclass
class DatasetSplit:
    train: list[SeqPair] = field(default_factory=list)
    valid: list[SeqPair] = field(default_factory=list)
    test: list[SeqPair] = field(default_factory=list)
    seed: int | None = None
    params: dict = field(default_factory=dict)

    def all_pairs(self):
        return self.train + self.valid + self.test

    def build_vocabulary(self) -> Vocabulary:
        if "alphabet" in self.params:
            return Vocabulary(self.params["alphabet"].split(","))
        return Vocabulary.build(seq for p in self.all_pairs() for seq in (p.source, p.target))

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in SPLITS:
            save_tsv(getattr(self, name), directory / f"{name}.tsv")
        manifest = dict(self.params)
        manifest["seed"] = self.seed
        write_manifest(manifest, directory / "manifest.txt")
        self.build_vocabulary().save(directory / "vocab.txt")

    @classmethod
    def load(cls, directory, vocab: Vocabulary | None = None) -> "DatasetSplit":
        directory = Path(directory)
        params = read_manifest(directory / "manifest.txt") if (directory / "manifest.txt").exists() else {}
        seed = params.pop("seed", None)
        parts = {name: load_tsv(directory / f"{name}.tsv", vocab) if (directory / f"{name}.tsv").exists() else []
                 for name in SPLITS}
        return cls(**parts, seed=None if seed in (None, "None") else int(seed), params=params)


# ----------------------------------------------------------------- file I/O

def save_tsv(pairs: Sequence[SeqPair], path):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(" ".join(p.source) + "\t" + " ".join(p.target) + "\n")


def load_tsv(path, vocab: Vocabulary | None = None) -> list[SeqPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.count("\t") != 1:
                raise ParseError("expected exactly one tab separating source and target", line=lineno)
            src, tgt = (part.split() for part in line.split("\t"))
            if not src or not tgt:
                raise ParseError("empty source or target", line=lineno)
            if vocab is not None:
                for tok in src + tgt:
                    if tok not in vocab:
                        raise VocabularyError(f"line {lineno}: unknown token {tok!r}")
            pairs.append(SeqPair(src, tgt))
    return pairs


def write_manifest(params: dict, path):
    lines = [f"{k}={v}" for k, v in sorted(params.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected key=value", line=lineno)
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# --------------------------------------------------------------- generators

def _pair_rng(seed, split_index, i):
    return np.random.default_rng(np.random.SeedSequence([int(seed), split_index, i]))


def letters(n: int) -> list[str]:
    pool = string.ascii_lowercase + string.digits
    if n > len(pool):
        return [f"c{i}" for i in range(n)]
    return list(pool[:n])


class MarkovText:
    """Seeded first-order character chain: every symbol has a few likely successors.

    Gives the clean strings enough local structure that a corrupted character
    can often be inferred from its neighbours, as in natural text.
    """

    def __init__(self, alphabet: Sequence[str], seed=0, branching=3, concentration=1.0):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7919]))
        self.alphabet = list(alphabet)
        n = len(self.alphabet)
        self.transitions = np.zeros((n, n))
        for i in range(n):
            succ = rng.choice(n, size=min(branching, n), replace=False)
            self.transitions[i, succ] = rng.dirichlet(np.full(len(succ), concentration))

    def sample(self, length: int, rng) -> list[str]:
        state = rng.integers(len(self.alphabet))
        out = [state]
        for _ in range(length - 1):
            state = rng.choice(len(self.alphabet), p=self.transitions[state])
            out.append(state)
        return [self.alphabet[i] for i in out]


def corrupt(tokens: Sequence[str], alphabet: Sequence[str], p: float, rng) -> list[str]:
    """Replace each token with probability p by a uniformly drawn *different* token."""
    out = []
    for tok in tokens:
        if rng.random() < p:
            choices = [a for a in alphabet if a != tok]
            tok = choices[rng.integers(len(choices))]
        out.append(tok)
    return out


def gen_spelling(p: float, seed: int = 0, *, sizes=(2000, 200, 500), alphabet_size=17,
                 t_max=10, min_len=3, text_file=None, branching=3) -> DatasetSplit:
    """Spelling-correction pairs: source = corrupted clean string, target = clean.

    Clean strings come from ``text_file`` (one per line, characters as tokens,
    spaces written as ``_``) or from a seeded :class:`MarkovText` language.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError("replacement probability must lie in [0, 1)")
    if text_file is not None:
        lines = [ln.strip().replace(" ", "_") for ln in Path(text_file).read_text(encoding="utf-8").splitlines()]
        corpus = [list(ln[:t_max]) for ln in lines if ln]
        if not corpus:
            raise ContractError(f"{text_file} has no usable lines")
        alphabet = sorted({c for line in corpus for c in line})
        if len(alphabet) < 2:
            raise ContractError("need at least two distinct characters to corrupt")
    else:
        alphabet = letters(alphabet_size)
        language = MarkovText(alphabet, seed=seed, branching=branching)
    split = DatasetSplit(seed=seed, params={
        "task": "spelling", "p": p, "t_max": t_max, "min_len": min_len,
        "alphabet": ",".join(alphabet), "source": text_file or "markov",
        "branching": branching, "sizes": ",".join(map(str, sizes)),
    })
    for split_index, (name, n) in enumerate(zip(SPLITS, sizes)):
        pairs = []
        for i in range(n):
            rng = _pair_rng(seed, split_index, i)
            if text_file is not None:
                clean = corpus[rng.integers(len(corpus))]
            else:
                clean = language.sample(int(rng.integers(min_len, t_max + 1)), rng)
            clean = list(clean[:t_max])
            pairs.append(SeqPair(corrupt(clean, alphabet, p, rng), clean))
        setattr(split, name, pairs)
    return split


def _apply_rule(rule: str, src: list[int], A: int) -> list[int]:
    name, _, arg = rule.partition(":")
    if name == "identity":
        return list(src)
    if name == "shift":
        k = int(arg or 1)
        return [(x + k) % A for x in src]
    if name == "reverse":
        return src[::-1]
    raise ContractError(f"unknown transduction rule {rule!r}")


def transduce(rule: str, tokens: Sequence[str], A: int) -> list[str]:
    return [str(x) for x in _apply_rule(rule, [int(t) for t in tokens], A)]


def gen_transduce(A: int, T: int, rule: str = "identity", seed: int = 0, *,
                  sizes=(1000, 100, 200), min_len=None) -> DatasetSplit:
    """Token-wise transduction over symbols ``"0".."A-1"`` (e.g. ``shift:1``)."""
    if A < 2 or T < 1:
        raise ContractError("need A >= 2 and T >= 1")
    min_len = T if min_len is None else min_len
    _apply_rule(rule, [0], A)
    split = DatasetSplit(seed=seed, params={
        "task": "transduce", "A": A, "T": T, "rule": rule, "min_len": min_len,
        "alphabet": ",".join(str(i) for i in range(A)), "sizes": ",".join(map(str, sizes)),
    })
    for split_index, (name, n) in enumerate(zip(SPLITS, sizes)):
        pairs = []
        for i in range(n):
            rng = _pair_rng(seed, split_index, i)
            length = int(rng.integers(min_len, T + 1))
            src = [int(x) for x in rng.integers(A, size=length)]
            pairs.append(SeqPair([str(x) for x in src], [str(x) for x in _apply_rule(rule, src, A)]))
        setattr(split, name, pairs)
    return split

"""GRU encoder-decoder with a softmax output layer.

The same functions run with or without an active tape: training records the
graph, decoding and roll-outs just evaluate it.  All batched entry points take
padded integer arrays; the single-sequence helpers (``encode``,
``decoder_step``, ``sequence_logprob``, ``greedy_decode``) wrap them with B=1.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError, ParseError, SequenceLengthError, VocabularyError
from .params import ParameterStore

BOS, EOS, PAD = "<s>", "</s>", "<pad>"
BOS_ID, EOS_ID, PAD_ID = 0, 1, 2


class Vocabulary:
    """Dense token <-> index map with the reserved tokens on indices 0, 1, 2."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = [BOS, EOS, PAD]
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocabulary(size={len(self)})"

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]]) -> "Vocabulary":
        seen = {}
        for seq in sequences:
            for tok in seq:
                seen.setdefault(tok, None)
        return cls(t for t in seen if t not in (BOS, EOS, PAD))

    def encode(self, tokens: Sequence[str]) -> list[int]:
        try:
            return [self.index[t] for t in tokens]
        except KeyError as exc:
            raise VocabularyError(f"unknown token {exc.args[0]!r}") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            if not 0 <= int(i) < len(self.tokens):
                raise VocabularyError(f"token index {i} outside [0, {len(self.tokens)})")
            out.append(self.tokens[int(i)])
        return out

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if lines[:3] != [BOS, EOS, PAD]:
            raise ParseError(f"{path}: reserved tokens must occupy lines 0-2", line=1)
        if len(set(lines)) != len(lines):
            raise ParseError(f"{path}: duplicate tokens")
        return cls(lines[3:])


def strip_eos(ids: Sequence[int]) -> list[int]:
    """Content tokens of a decoded sequence: everything before the first EOS."""
    out = []
    for i in ids:
        if int(i) == EOS_ID:
            break
        out.append(int(i))
    return out


def pad_batch(seqs: Sequence[Sequence[int]], pad=PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.intp)
    out = np.full((len(seqs), max(lengths.max(initial=0), 1)), pad, dtype=np.intp)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths


@dataclass
class EncoderContext:
    """phi(x): final encoder state plus per-position states for attention."""

    final: Tensor                 # (B, H)
    states: Tensor | None = None  # (B, S, H), only with attention
    keys: Tensor | None = None    # (B, S, H) projected states, only with attention
    mask: np.ndarray | None = None

    def take(self, rows) -> "EncoderContext":
        """Row-gather for roll-outs (untaped)."""
        rows = np.asarray(rows, dtype=np.intp)
        if self.states is None:
            return EncoderContext(Tensor(self.final.value[rows]))
        return EncoderContext(Tensor(self.final.value[rows]), Tensor(self.states.value[rows]),
                              Tensor(self.keys.value[rows]), self.mask[rows])


@dataclass
class DecoderState:
    hidden: Tensor  # (1, H)
    t: int
    context: EncoderContext


class Seq2Seq:
    """Embedding + GRU encoder + GRU decoder + linear projection.

    Parameters live in ``self.params`` (a ParameterStore), so the optimizer and
    checkpoint code never need to know the architecture.
    """

    def __init__(self, vocab_size, embedding_size=16, hidden_size=32, *, attention=False,
                 max_steps=11, seed=0, init_scale=None, params=None):
        if vocab_size < 4:
            raise ContractError("vocabulary needs at least one non-reserved token")
        self.vocab_size = int(vocab_size)
        self.embedding_size = int(embedding_size)
        self.hidden_size = int(hidden_size)
        self.attention = bool(attention)
        self.max_steps = int(max_steps)
        if params is None:
            params = self.init_params(np.random.default_rng(seed), init_scale)
        self.params = params

    def init_params(self, rng, init_scale=None) -> ParameterStore:
        V, E, H = self.vocab_size, self.embedding_size, self.hidden_size
        s = init_scale if init_scale is not None else 1.0 / np.sqrt(H)
        u = lambda *shape: rng.uniform(-s, s, size=shape)
        store = ParameterStore()
        store.add("embedding", rng.normal(0.0, 0.1 if init_scale is None else init_scale, size=(V, E)))
        dec_in = E + H if self.attention else E
        for prefix, n_in in (("enc", E), ("dec", dec_in)):
            for gate in ("z", "r", "n"):
                store.add(f"{prefix}.W{gate}", u(n_in, H))
                store.add(f"{prefix}.U{gate}", u(H, H))
                store.add(f"{prefix}.b{gate}", u(H))
        if self.attention:
            store.add("att.W", u(H, H))
            store.add("att.U", u(H, H))
            store.add("att.v", u(H, 1))
        store.add("proj.W", u(H, V))
        store.add("proj.b", u(V))
        return store

    @classmethod
    def from_state(cls, state: dict, max_steps=11) -> "Seq2Seq":
        """Rebuild a model from checkpoint arrays; sizes are read off the shapes."""
        try:
            V, E = state["embedding"].shape
            H = state["enc.Uz"].shape[0]
        except (KeyError, ValueError) as exc:
            raise ContractError(f"not a Seq2Seq checkpoint: {exc}") from None
        model = cls(V, E, H, attention="att.W" in state, max_steps=max_steps)
        model.params.load_state_dict(state)
        return model

    def zero_(self):
        """Set every parameter to zero (degenerate-model tests)."""
        for p in self.params:
            p.value = np.zeros_like(p.value)

    # ------------------------------------------------------------------ cells

    def _gru(self, prefix, x, h):
        P = self.params
        z = ad.sigmoid(x @ P[f"{prefix}.Wz"] + h @ P[f"{prefix}.Uz"] + P[f"{prefix}.bz"])
        r = ad.sigmoid(x @ P[f"{prefix}.Wr"] + h @ P[f"{prefix}.Ur"] + P[f"{prefix}.br"])
        n = ad.tanh(x @ P[f"{prefix}.Wn"] + (r * h) @ P[f"{prefix}.Un"] + P[f"{prefix}.bn"])
        return n + z * (h - n)

    def encode_batch(self, src: np.ndarray, lengths: np.ndarray) -> EncoderContext:
        src = np.asarray(src, dtype=np.intp)
        if src.size == 0 or np.any(lengths < 1):
            raise ContractError("encoder input must be non-empty")
        if src.min() < 0 or src.max() >= self.vocab_size:
            raise VocabularyError(f"token index outside [0, {self.vocab_size})")
        B, S = src.shape
        h = Tensor(np.zeros((B, self.hidden_size)))
        states = []
        ragged = not np.all(lengths == S)
        for j in range(S):
            x = ad.embedding(self.params["embedding"], src[:, j])
            h_new = self._gru("enc", x, h)
            if ragged:
                m = (j < lengths).astype(np.float64)[:, None]
                h = h_new * m + h * (1.0 - m)
            else:
                h = h_new
            states.append(h)
        if not self.attention:
            return EncoderContext(h)
        stacked = ad.concat([ad.reshape(s, (B, 1, self.hidden_size)) for s in states], axis=1)
        keys = stacked @ self.params["att.U"]
        mask = np.arange(S)[None, :] < np.asarray(lengths)[:, None]
        return EncoderContext(h, stacked, keys, mask)

    def _attend(self, h, ctx: EncoderContext):
        B, S, H = ctx.states.shape
        q = ad.reshape(h @ self.params["att.W"], (B, 1, H))
        energy = ad.reshape(ad.tanh(q + ctx.keys) @ self.params["att.v"], (B, S))
        alpha = ad.softmax(energy, mask=ctx.mask)
        return ad.reshape(ad.reshape(alpha, (B, 1, S)) @ ctx.states, (B, H))

    def step_batch(self, h: Tensor, prev_tokens, ctx: EncoderContext):
        """One decoder cell: returns (h_t, s_t) for a batch of rows."""
        x = ad.embedding(self.params["embedding"], np.asarray(prev_tokens, dtype=np.intp))
        if self.attention:
            x = ad.concat([x, self._attend(h, ctx)], axis=-1)
        h = self._gru("dec", x, h)
        scores = h @ self.params["proj.W"] + self.params["proj.b"]
        return h, scores

    def teacher_forced_scores(self, ctx: EncoderContext, inputs: np.ndarray) -> tuple[list[Tensor], list[Tensor]]:
        """Run the decoder feeding ``inputs[:, t]`` at cell t (BOS first).

        ``inputs`` holds the previous-token sequence, i.e. BOS followed by the
        prefix the cells condition on.  Returns per-cell (states, scores).
        """
        h = ctx.final
        states, scores = [], []
        for t in range(inputs.shape[1]):
            h, s = self.step_batch(h, inputs[:, t], ctx)
            states.append(h)
            scores.append(s)
        return states, scores

    def greedy_batch(self, h: Tensor, prev: np.ndarray, ctx: EncoderContext, start: np.ndarray,
                     max_len: int, forced: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Greedy continuation for many rows at once (untaped).

        Row i has already produced ``start[i]`` tokens, the last of which is
        ``prev[i]``, and its decoder state is ``h[i]``.  Emits tokens at
        positions ``start[i] .. max_len-1`` until EOS.  ``forced[i, p] >= 0``
        overrides the argmax at absolute position p.  Returns the (N, max_len)
        token array and the per-row end position (exclusive).
        """
        N = len(prev)
        out = np.full((N, max_len), PAD_ID, dtype=np.intp)
        pos = np.asarray(start, dtype=np.intp).copy()
        prev = np.asarray(prev, dtype=np.intp).copy()
        alive = (pos < max_len) & (prev != EOS_ID) if N else np.zeros(0, bool)
        hv = h.value.copy()
        while alive.any():
            rows = np.flatnonzero(alive)
            sub = ctx.take(rows) if self.attention else None
            h_new, s = self.step_batch(Tensor(hv[rows]), prev[rows], sub)
            hv[rows] = h_new.value
            tok = np.argmax(s.value, axis=-1)
            if forced is not None:
                f = forced[rows, pos[rows]]
                tok = np.where(f >= 0, f, tok)
            out[rows, pos[rows]] = tok
            prev[rows] = tok
            pos[rows] += 1
            alive[rows] = (pos[rows] < max_len) & (tok != EOS_ID)
        return out, pos

    # ---------------------------------------------------- single-sequence API

    def _check_ids(self, ids):
        ids = np.asarray(ids, dtype=np.intp).ravel()
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise VocabularyError(f"token index outside [0, {self.vocab_size})")
        return ids

    def encode(self, tokens: Sequence[int]) -> EncoderContext:
        ids = self._check_ids(tokens)
        if ids.size == 0:
            raise ContractError("encoder input must be non-empty")
        return self.encode_batch(ids[None, :], np.array([ids.size]))

    def initial_state(self, ctx: EncoderContext) -> DecoderState:
        return DecoderState(ctx.final, 0, ctx)

    def decoder_step(self, state: DecoderState, prev_token: int):
        """Advance one cell. Returns (new_state, scores (A,), probabilities (A,))."""
        if state.t >= self.max_steps:
            raise SequenceLengthError(f"step {state.t + 1} exceeds max_steps={self.max_steps}")
        self._check_ids([prev_token])
        h, s = self.step_batch(state.hidden, [prev_token], state.context)
        scores = ad.reshape(s, (self.vocab_size,))
        return DecoderState(h, state.t + 1, state.context), scores, ad.softmax(scores)

    def sequence_logprob(self, source: Sequence[int], target: Sequence[int]) -> Tensor:
        """log p(target | source) under teacher forcing, as a scalar tensor."""
        tgt = self._check_ids(target)
        if tgt.size == 0:
            raise ContractError("target must be non-empty")
        if tgt.size > self.max_steps:
            raise SequenceLengthError(f"target length {tgt.size} exceeds max_steps={self.max_steps}")
        ctx = self.encode(source)
        inputs = np.concatenate([[BOS_ID], tgt[:-1]])[None, :]
        _, scores = self.teacher_forced_scores(ctx, inputs)
        total = None
        for t, s in enumerate(scores):
            onehot = np.zeros(self.vocab_size)
            onehot[tgt[t]] = 1.0
            term = ad.sum_(ad.log_softmax(s) * onehot)
            total = term if total is None else total + term
        return total

    def greedy_decode(self, source: Sequence[int], max_len: int | None = None,
                      enforced: tuple[int, int] | None = None,
                      prefix: Sequence[int] | None = None) -> list[int]:
        """Greedy decoding, 0-based positions; output includes EOS if emitted.

        ``prefix`` tokens are emitted verbatim at positions 0..len(prefix)-1;
        ``enforced=(t, a)`` emits ``a`` at position t. Both are fed back to the
        following cells as if the model had predicted them.
        """
        max_len = self.max_steps if max_len is None else int(max_len)
        if max_len < 1:
            raise ContractError("max_len must be >= 1")
        if max_len > self.max_steps:
            raise SequenceLengthError(f"max_len {max_len} exceeds max_steps={self.max_steps}")
        forced = np.full((1, max_len), -1, dtype=np.intp)
        if prefix is not None:
            prefix = self._check_ids(prefix)
            if len(prefix) >= max_len:
                raise ContractError("prefix must be shorter than max_len")
            forced[0, :len(prefix)] = prefix
        if enforced is not None:
            t, a = int(enforced[0]), int(enforced[1])
            if not 0 <= t < max_len:
                raise ContractError(f"enforced position {t} outside [0, {max_len})")
            self._check_ids([a])
            forced[0, t] = a
        ctx = self.encode(source)
        out, end = self.greedy_batch(ctx.final, np.array([BOS_ID]), ctx, np.array([0]), max_len, forced)
        return [int(tok) for tok in out[0, :end[0]]]

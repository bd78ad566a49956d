"""scikit-learn style front end: ``SearnnSeq2Seq().fit(X, y).predict(X)``.

X and y are sequences of token sequences (lists of strings, or
whitespace-separated strings). The estimator owns the vocabulary, the model
and the training history.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .engine import SamplerSpec
from .exceptions import ContractError
from .losses import LossSpec
from .model import Seq2Seq, Vocabulary
from .policies import PolicySpec
from .training import METRICS, evaluate, greedy_predict, score_predictions, train_model
from .validation import check_choice, check_pairs, check_positive_int, check_sequences


class SearnnSeq2Seq(BaseEstimator):
    """GRU encoder-decoder trained with SEARNN (or plain MLE).

    Parameters
    ----------
    loss : str
        One of ``mle, ll, kl, llcas, shl, consistent, sll, skl``.
    alpha : float or None
        Cost temperature for ``kl``, ``llcas`` and ``skl``.
    roll_in, roll_out : str
        ``reference`` or ``learned``; roll-out may also be ``mixed``.
    cells, token_strategy, k, neighbor_window
        Roll-out subsampling, see :class:`searnn.engine.SamplerSpec`.
    cost : str
        Sequence cost used for roll-outs: ``hamming``, ``edit`` or ``bleu``.
    metric : str
        Evaluation metric for validation and :meth:`score`.
    n_rounds : int
        Number of mini-batch gradient steps.
    max_len : int or None
        Longest output the decoder may emit; defaults to the longest target.
    random_state : int
        Seeds initialization, batch order and every roll-out draw.
    """

    def __init__(self, loss="ll", alpha=None, roll_in="learned", roll_out="mixed", mix_probability=0.5,
                 reference="copy", cells=None, token_strategy="all", k=None, neighbor_window=0,
                 cost="edit", metric="edit", hidden_size=32, embedding_size=16, attention=False,
                 optimizer="adam", learning_rate=1e-3, batch_size=32, n_rounds=1000, eval_every=50,
                 keep_best=True, max_len=None, random_state=0):
        self.loss = loss
        self.alpha = alpha
        self.roll_in = roll_in
        self.roll_out = roll_out
        self.mix_probability = mix_probability
        self.reference = reference
        self.cells = cells
        self.token_strategy = token_strategy
        self.k = k
        self.neighbor_window = neighbor_window
        self.cost = cost
        self.metric = metric
        self.hidden_size = hidden_size
        self.embedding_size = embedding_size
        self.attention = attention
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_rounds = n_rounds
        self.eval_every = eval_every
        self.keep_best = keep_best
        self.max_len = max_len
        self.random_state = random_state

    def _specs(self):
        loss = LossSpec(self.loss, self.alpha)
        policy = PolicySpec(self.roll_in, self.roll_out, self.mix_probability, self.reference)
        sampler = SamplerSpec(self.cells, self.token_strategy, self.k, self.neighbor_window)
        return loss, policy, sampler

    def _seed(self) -> int:
        if self.random_state is None:
            return 0
        if isinstance(self.random_state, (int, np.integer)):
            return int(self.random_state)
        raise ContractError("random_state must be an int (runs are reproducible by seed)")

    def fit(self, X, y, X_val=None, y_val=None, vocabulary: Vocabulary | None = None,
            callback=None, on_costs=None, X_test=None, y_test=None):
        """Train on (X, y). With ``X_val``/``y_val`` the best validation round is kept.

        ``X_test``/``y_test`` only feed the test column of ``history_``.
        """
        loss, policy, sampler = self._specs()
        check_choice(self.metric, "metric", METRICS)
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.n_rounds, "n_rounds", minimum=0)
        X, y = check_pairs(X, y)
        max_len = max(len(t) for t in y) if self.max_len is None else check_positive_int(self.max_len, "max_len")
        X, y = check_pairs(X, y, max_len)
        vocab = vocabulary if vocabulary is not None else Vocabulary.build(X + y)
        pairs = [(vocab.encode(s), vocab.encode(t)) for s, t in zip(X, y)]
        eval_pairs = None
        if X_val is not None:
            Xv, yv = check_pairs(X_val, y_val)
            eval_pairs = [(vocab.encode(s), vocab.encode(t)) for s, t in zip(Xv, yv)]
        test_pairs = None
        if X_test is not None:
            Xt, yt = check_pairs(X_test, y_test)
            test_pairs = [(vocab.encode(s), vocab.encode(t)) for s, t in zip(Xt, yt)]
        seed = self._seed()
        self.vocabulary_ = vocab
        self.model_ = Seq2Seq(len(vocab), self.embedding_size, self.hidden_size, attention=self.attention,
                              max_steps=max_len + 1, seed=seed)
        self.result_ = train_model(
            self.model_, pairs, loss=loss, policy=policy, sampler=sampler, cost=self.cost,
            optimizer=self.optimizer, lr=self.learning_rate, batch_size=self.batch_size,
            rounds=self.n_rounds, seed=seed, eval_pairs=eval_pairs, metric=self.metric,
            eval_every=self.eval_every, keep_best=self.keep_best, callback=callback, on_costs=on_costs,
            test_pairs=test_pairs)
        self.history_ = self.result_.history
        return self

    def _encode_sources(self, X):
        check_is_fitted(self, "model_")
        return [self.vocabulary_.encode(s) for s in check_sequences(X)]

    def predict(self, X) -> list[list[str]]:
        """Greedy decodes, as token lists without the end marker."""
        sources = self._encode_sources(X)
        return [self.vocabulary_.decode(ids) for ids in greedy_predict(self.model_, sources)]

    def error(self, X, y, metric=None) -> float:
        """Test error under ``metric`` (defaults to the estimator's metric)."""
        metric = check_choice(metric or self.metric, "metric", METRICS)
        X, y = check_pairs(X, y)
        pairs = [(s, self.vocabulary_.encode(t)) for s, t in zip(self._encode_sources(X), y)]
        return evaluate(self.model_, pairs, metric)

    def score(self, X, y) -> float:
        """1 - error, so that larger is better as scikit-learn expects."""
        return 1.0 - self.error(X, y)

    def score_predictions(self, predictions, y, metric=None) -> float:
        metric = check_choice(metric or self.metric, "metric", METRICS)
        preds = [self.vocabulary_.encode(p) for p in check_sequences(predictions, "predictions", allow_empty=True)]
        return score_predictions(preds, [self.vocabulary_.encode(t) for t in check_sequences(y, "y")], metric)

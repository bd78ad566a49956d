"""SEARNN: training recurrent networks with learning-to-search costs."""

__version__ = "0.1.0"

from .autodiff import Parameter, Tape, Tensor  # noqa: E402
from .costs import edit_distance, get_cost, smoothed_bleu_cost  # noqa: E402
from .datasets import DatasetSplit, SeqPair, gen_spelling, gen_transduce, load_tsv  # noqa: E402
from .engine import CostTensor, SamplerSpec, collect_costs  # noqa: E402
from .estimator import SearnnSeq2Seq  # noqa: E402
from .losses import LossSpec  # noqa: E402
from .model import Seq2Seq, Vocabulary  # noqa: E402
from .params import ParameterStore, load_checkpoint, save_checkpoint  # noqa: E402
from .policies import PolicySpec  # noqa: E402
from .training import evaluate, train_model  # noqa: E402

__all__ = [
    "CostTensor", "DatasetSplit", "LossSpec", "Parameter", "ParameterStore", "PolicySpec",
    "SamplerSpec", "SearnnSeq2Seq", "SeqPair", "Seq2Seq", "Tape", "Tensor", "Vocabulary",
    "collect_costs", "edit_distance", "evaluate", "gen_spelling", "gen_transduce", "get_cost",
    "load_checkpoint", "load_tsv", "save_checkpoint", "smoothed_bleu_cost", "train_model",
]

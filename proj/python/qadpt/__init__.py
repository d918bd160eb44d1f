"""Python access to the qadpt library: corpora, training, decoding, metrics."""

import json

from ._core import (
    Corpus,
    DataError,
    Model,
    NumericError,
    UsageError,
    bleu2,
    change_rate,
    cli,
    distinct_n,
    generated_kw,
    ingest,
    load_bundle,
    load_checkpoint,
    replay_report,
    synthetic,
    train,
)
from ._core import evaluate as _evaluate
from ._core import perturb as _perturb


def evaluate(model, corpus, split="test", metrics="all", workers=1):
    """Evaluation report as a dict (see ``evaluate_json`` for the raw text)."""
    return json.loads(_evaluate(model, corpus, split, metrics, workers))


def evaluate_json(model, corpus, split="test", metrics="all", workers=1):
    return _evaluate(model, corpus, split, metrics, workers)


def perturb(model, corpus, mode="last1", seed=1, split="test"):
    return json.loads(_perturb(model, corpus, mode, seed, split))


__all__ = [
    "Corpus",
    "DataError",
    "Model",
    "NumericError",
    "UsageError",
    "bleu2",
    "change_rate",
    "cli",
    "distinct_n",
    "evaluate",
    "evaluate_json",
    "generated_kw",
    "ingest",
    "load_bundle",
    "load_checkpoint",
    "perturb",
    "replay_report",
    "synthetic",
    "train",
]

"""Multi-task affective-behavior head (AU, expression, valence/arousal)."""

import json

from ._core import (  # noqa: F401
    NUM_AU,
    NUM_EXPR,
    NUM_QUERIES,
    ConfigError,
    DataError,
    DivergenceError,
    Error,
    FormatError,
    GraphError,
    ShapeError,
    UndefinedMetricError,
    ccc,
    ensemble,
    f1_binary,
    f1_macro_expr,
    gen_synthetic,
    kfold_split,
    load_features,
    load_labels,
    load_raw_predictions,
    p_mtl,
    predict,
    save_features,
    save_labels,
    save_predictions,
)
from . import _core


def train(**config):
    """Trains one model. Keyword arguments follow the run configuration JSON
    (features, labels, output_dir, epochs, batch_size, ..., model={...}).
    Returns the training report as a dict."""
    return json.loads(_core._train(json.dumps(config)))


def evaluate_raw(raw_predictions, labels):
    """Scores a raw prediction file against a list of label dicts."""
    return json.loads(_core._evaluate_raw(raw_predictions, labels))


def fold_aggregate(reports):
    """Field-wise mean of evaluation report dicts."""
    return json.loads(_core._fold_aggregate([json.dumps(r) for r in reports]))

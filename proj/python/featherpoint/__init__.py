"""Python bindings for the featherpoint C++ core."""

import json

from ._featherpoint import (
    ConfigError,
    Error,
    FormatError,
    InvalidValue,
    IoError,
    Model,
    NumericError,
    ShapeError,
    check_budget,
    default_config,
    descriptor_std,
    evaluate,
    extract,
    fake_quant_affine,
    gen_data,
    gumbel_softmax,
    match,
    nms,
    quantize,
    read_image,
    report,
    resolve_config,
    train,
)

__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "InvalidValue",
    "IoError",
    "Model",
    "NumericError",
    "ShapeError",
    "check_budget",
    "config",
    "default_config",
    "descriptor_std",
    "evaluate",
    "extract",
    "fake_quant_affine",
    "gen_data",
    "gumbel_softmax",
    "match",
    "nms",
    "quantize",
    "read_image",
    "report",
    "resolve_config",
    "train",
]


def config(**overrides):
    """Resolved configuration as a JSON string.

    Keyword names use double underscores for nesting, so
    ``config(train__epochs=2, seed=3)`` sets ``train.epochs`` and ``seed``.
    Values are encoded as JSON.
    """
    dotted = {k.replace("__", "."): json.dumps(v) for k, v in overrides.items()}
    return resolve_config("{}", dotted)

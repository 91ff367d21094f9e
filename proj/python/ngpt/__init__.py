"""Normalized transformer with hyperparameter-transfer planning (C++ core)."""

from ._core import (
    ConfigError,
    DegenerateInputError,
    IoError,
    Model,
    NonFiniteError,
    depth_scaling,
    exponent,
    fit_power_law,
    lr_at,
    pair_exponent,
    plan,
    schemes,
    steps_for_tokens_per_param,
    sweep,
    train,
)

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "IoError",
    "Model",
    "NonFiniteError",
    "depth_scaling",
    "exponent",
    "fit_power_law",
    "lr_at",
    "pair_exponent",
    "plan",
    "schemes",
    "steps_for_tokens_per_param",
    "sweep",
    "train",
]

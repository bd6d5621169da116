"""Python bindings for the varlab actor-critic variance toolkit."""

from ._varlab import (
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    analyze,
    bench,
    env_info,
    env_names,
    eval_gain_ratio,
    layer_norm,
    pearson,
    performance_profile,
    pnorm,
    preset_names,
    probe_policy,
    rollout_constant,
    run_seed,
    summarize_scores,
    train,
    variance_decomposition,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "NumericError",
    "ShapeError",
    "analyze",
    "bench",
    "env_info",
    "env_names",
    "eval_gain_ratio",
    "layer_norm",
    "pearson",
    "performance_profile",
    "pnorm",
    "preset_names",
    "probe_policy",
    "rollout_constant",
    "run_seed",
    "summarize_scores",
    "train",
    "variance_decomposition",
]

"""Toy diffusion lab for poisoning and safe-zone training.

Arrays cross the boundary as float32 numpy arrays; images are [1, H, W] with
values in [0, 1].
"""

from ._szlab import (
    ConfigError,
    InsufficientSamples,
    InvalidArgument,
    NumericFailure,
    Schedule,
    SingularMatrix,
    StageFailure,
    UndefinedRatio,
    conditional_noise_stats,
    exact_noise_norm,
    expected_noise_norm,
    generate_concepts,
    jpeg_compress,
    monte_carlo_noise_stats,
    perturbation_histogram,
    project_linf,
    quantile,
    rapsd,
    read_tensor,
    run_experiment,
    sampler_cdf,
    timestep_grid,
    total_power,
    validate_config,
    write_tensor,
)

__all__ = [name for name in dir() if not name.startswith("_")]

"""Heat exposure and mortality risk pipeline."""

from ._heatrisk import (
    HeatriskError,
    conditional_loglik,
    default_config,
    detect_heatwaves,
    matern,
    pc_prior_rate,
    run,
    simulate,
    subcommands,
    tps_interpolate,
)

__all__ = [
    "HeatriskError",
    "conditional_loglik",
    "default_config",
    "detect_heatwaves",
    "matern",
    "pc_prior_rate",
    "run",
    "simulate",
    "subcommands",
    "tps_interpolate",
]

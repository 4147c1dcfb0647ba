"""Incentive-driven load balancing: pricing, forecasting, household selection."""

from ._ilb import (
    Community,
    Error,
    Household,
    OfferTerms,
    __version__,
    generate_community,
    inject_noise,
    kernel_similarity,
    min_incentive,
    price_change_pct,
    rate_hike,
    run_scenario,
    run_sweep,
    spearman,
    spectral_clusters,
)

__all__ = [
    "Community",
    "Error",
    "Household",
    "OfferTerms",
    "__version__",
    "generate_community",
    "inject_noise",
    "kernel_similarity",
    "min_incentive",
    "price_change_pct",
    "rate_hike",
    "run_scenario",
    "run_sweep",
    "spearman",
    "spectral_clusters",
]

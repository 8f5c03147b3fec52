"""Variance-optimal weighted reservoir sampling.

Maintains a fixed-capacity sample of a weighted stream such that any
subset-sum estimate from the sample is unbiased with minimal total
variance, supports merging independently built samples, and provides
variance statistics and confidence bounds for the estimates.
"""

from .core import (
    ConsistencyError,
    RandomSource,
    Sample,
    SampleEntry,
    WeightedItem,
    check_varopt_sample,
    derive_seed,
    inclusion_probability,
    ipps_threshold,
    items_from_weights,
    select_drop,
)
from .reservoir import ReservoirState, reservoir_new, varopt_sample
from .merge import (
    SampleParseError,
    deserialize_sample,
    deserialize_sample_text,
    merge,
    serialize_sample,
    serialize_sample_text,
)
from .stats import (
    EmpiricalReport,
    VarianceReport,
    aux_variance,
    chernoff_bound,
    chernoff_bound_loose,
    confidence_interval,
    empirical_report,
    sigma_v_analytic,
    subset_estimate,
    v_m,
    w_p,
)
from .baselines import (
    bad_instance,
    poisson_ipps_sample,
    ppswor_order,
    ppswr_sample,
    priority_sample,
    uniform_sample,
)

__version__ = "0.1.0"

__all__ = [
    "ConsistencyError",
    "RandomSource",
    "Sample",
    "SampleEntry",
    "WeightedItem",
    "check_varopt_sample",
    "derive_seed",
    "inclusion_probability",
    "ipps_threshold",
    "items_from_weights",
    "select_drop",
    "ReservoirState",
    "reservoir_new",
    "varopt_sample",
    "SampleParseError",
    "deserialize_sample",
    "deserialize_sample_text",
    "merge",
    "serialize_sample",
    "serialize_sample_text",
    "EmpiricalReport",
    "VarianceReport",
    "aux_variance",
    "chernoff_bound",
    "chernoff_bound_loose",
    "confidence_interval",
    "empirical_report",
    "sigma_v_analytic",
    "subset_estimate",
    "v_m",
    "w_p",
    "bad_instance",
    "poisson_ipps_sample",
    "ppswor_order",
    "ppswr_sample",
    "priority_sample",
    "uniform_sample",
    "__version__",
]

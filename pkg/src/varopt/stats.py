"""Estimation and variance accounting for weighted samples.

Subset-sum estimates come straight off a sample's adjusted weights.
This module adds the analytic variance quantities that make those
estimates auditable: the total per-item variance, its distribution over
random subsets and weighted averages, Poisson-style tail bounds on the
number of sampled below-threshold items, confidence intervals derived
by inverting those bounds, and a Monte Carlo harness that measures all
of it empirically for any sampling scheme.

Conventions: empirical moments use the population form (divide by the
number of trials), estimates are compared against true weights as
deviations so near-zero variances are not drowned by cancellation, and
trial t of a run seeded with s draws from RandomSource(derive_seed(s, t))
so results do not depend on how trials are batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Collection, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .core import (
    RandomSource,
    Sample,
    WeightedItem,
    derive_seed,
    ipps_threshold,
    items_from_weights,
)

__all__ = [
    "VarianceReport",
    "EmpiricalReport",
    "subset_estimate",
    "sigma_v_analytic",
    "v_m",
    "w_p",
    "aux_variance",
    "chernoff_bound",
    "chernoff_bound_loose",
    "confidence_interval",
    "empirical_report",
]

Selector = Callable[[Hashable], bool] | Collection[Hashable]
Sampler = Callable[[Sequence[WeightedItem], int, RandomSource], Sample]

_BISECT_TOL = 1e-9


@dataclass(frozen=True, slots=True)
class VarianceReport:
    """Variance summary of a sampling scheme on one instance.

    sigma_v is the sum over items of Var[estimate_i]; v_sigma is the
    variance of the full-population estimate (zero exactly when per-item
    errors cancel). source records where the numbers came from, either
    "analytic" or "empirical(<trials>)".
    """

    sigma_v: float
    v_sigma: float
    n: int
    source: str

    def __post_init__(self) -> None:
        for name in ("sigma_v", "v_sigma"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")

    def to_tsv(self) -> str:
        """Two-line tab-separated rendering (header plus values)."""
        header = "sigma_v\tv_sigma\tn\tsource"
        values = f"{self.sigma_v!r}\t{self.v_sigma!r}\t{self.n}\t{self.source}"
        return f"{header}\n{values}\n"

    def summary(self) -> str:
        """Single-line human-readable rendering."""
        return (
            f"sigma_v={self.sigma_v:.6g} v_sigma={self.v_sigma:.6g}"
            f" n={self.n} source={self.source}"
        )


@dataclass(frozen=True)
class EmpiricalReport:
    """Full output of the Monte Carlo harness.

    item_means[i] is the mean estimate of item i over all trials (an
    unbiased scheme keeps it near the true weight). inclusion_counts[i]
    is how many trials sampled item i. covariance is the n-by-n matrix
    of estimate covariances when requested, else None. partition_sse
    maps each partition label to the mean over trials of the sum of
    squared per-block errors. light_sampled_hist[x] counts the trials
    in which exactly x of the instance's below-threshold items were
    sampled (all zeros land in bin 0 when the instance has no
    threshold).
    """

    report: VarianceReport
    trials: int
    item_means: np.ndarray
    inclusion_counts: np.ndarray
    covariance: np.ndarray | None
    partition_sse: dict[str, float]
    light_sampled_hist: np.ndarray


def _selector_parts(
    selector: Selector,
) -> tuple[Callable[[Hashable], bool], set[Hashable] | None]:
    """Normalize a selector into (predicate, explicit key set or None)."""
    if callable(selector):
        return selector, None
    keys = set(selector)
    return keys.__contains__, keys


def subset_estimate(sample: Sample, selector: Selector) -> float:
    """Unbiased estimate of the total weight of the selected keys.

    The selector is either a predicate over keys or a collection of
    keys. Selecting nothing gives 0.0; selecting everything reproduces
    the sample's exact stream total.
    """
    predicate, _ = _selector_parts(selector)
    return math.fsum(
        entry.adjusted_weight for entry in sample.entries if predicate(entry.key)
    )


def sigma_v_analytic(weights: Sequence[float], k: int) -> float:
    """Sum of per-item estimate variances for the optimal scheme.

    Every item strictly below the instance threshold contributes
    w * (threshold - w); items at or above it are kept deterministically
    and contribute nothing. Zero when k covers the whole instance.
    """
    tau = ipps_threshold(weights, k)
    if tau == 0.0:
        return 0.0
    return math.fsum(float(w) * (tau - float(w)) for w in weights if float(w) < tau)


def v_m(sigma_v: float, v_sigma: float, n: int, m: int) -> float:
    """Expected variance of the estimate of a uniformly random m-subset.

    Interpolates between per-item variance (m = 1 gives sigma_v / n) and
    the full-population variance (m = n gives v_sigma) through
    (m/n) * ((n-m)/(n-1) * sigma_v + (m-1)/(n-1) * v_sigma).

    Raises:
        ValueError: If n < 2 or m is outside [1, n].
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, n] = [1, {n}], got {m}")
    return (m / n) * (((n - m) / (n - 1)) * sigma_v + ((m - 1) / (n - 1)) * v_sigma)


def w_p(sigma_v: float, v_sigma: float, p: float) -> float:
    """Expected variance over subsets drawn by including each key w.p. p.

    Equals p * ((1 - p) * sigma_v + p * v_sigma); p = 1 recovers
    v_sigma and p = 0 gives zero.

    Raises:
        ValueError: If p is outside [0, 1].
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    return p * ((1.0 - p) * sigma_v + p * v_sigma)


def aux_variance(
    sigma_v: float, v_sigma: float, xi_mean: float, xi_var: float
) -> float:
    """Expected estimate variance under random i.i.d. key multipliers.

    Each key's weight is scaled by an independent draw of an auxiliary
    variable with the given mean and variance; the resulting estimator
    variance is xi_var * sigma_v + xi_mean**2 * v_sigma. Setting the
    auxiliary variable to a Bernoulli(p) recovers w_p.

    Raises:
        ValueError: If xi_var is negative.
    """
    if xi_var < 0.0:
        raise ValueError(f"xi_var must be >= 0, got {xi_var}")
    return xi_var * sigma_v + xi_mean * xi_mean * v_sigma


def chernoff_bound(m: float, mu: float, a: float) -> float:
    """Tail bound for a sum of m independent [0, 1] variables with mean mu.

    Bounds P(X <= a) when a <= mu and P(X >= a) when a >= mu by
    ((m - mu) / (m - a))**(m - a) * (mu / a)**a, evaluated in log space.
    At a = mu the bound is exactly 1.

    Raises:
        ValueError: Unless 0 < a < m and 0 < mu < m.
    """
    if not (m > 0.0 and math.isfinite(m)):
        raise ValueError(f"m must be positive and finite, got {m}")
    if not (0.0 < a < m):
        raise ValueError(f"a must satisfy 0 < a < m, got a={a}, m={m}")
    if not (0.0 < mu < m):
        raise ValueError(f"mu must satisfy 0 < mu < m, got mu={mu}, m={m}")
    log_value = (m - a) * (math.log(m - mu) - math.log(m - a)) + a * (
        math.log(mu) - math.log(a)
    )
    return min(1.0, math.exp(log_value))


def chernoff_bound_loose(mu: float, a: float) -> float:
    """Population-size-free weakening of chernoff_bound.

    exp(a - mu) * (mu / a)**a bounds the same tails without needing the
    number of variables m; it is what remains of the tight bound as m
    grows without limit. At a = mu the bound is exactly 1.

    Raises:
        ValueError: Unless a > 0 and mu > 0.
    """
    if not (a > 0.0 and math.isfinite(a)):
        raise ValueError(f"a must be positive and finite, got {a}")
    if not (mu > 0.0 and math.isfinite(mu)):
        raise ValueError(f"mu must be positive and finite, got {mu}")
    log_value = a - mu + a * (math.log(mu) - math.log(a))
    return min(1.0, math.exp(log_value))


def _tail(m: float, mu: float, a: float) -> float:
    """chernoff_bound extended to the endpoints a = 0 and a = m."""
    if a <= 0.0:
        return math.exp(m * (math.log(m - mu) - math.log(m)))
    if a >= m:
        return math.exp(m * (math.log(mu) - math.log(m)))
    return chernoff_bound(m, mu, a)


def _tail_loose(mu: float, a: float) -> float:
    """chernoff_bound_loose extended to the endpoint a = 0."""
    if a <= 0.0:
        return math.exp(-mu)
    return chernoff_bound_loose(mu, a)


def _invert_upper(bound: Callable[[float], float], a: float, hi: float, delta: float) -> float:
    """Largest mu in [a, hi] whose lower-tail bound at a stays >= delta.

    The bound decreases from 1 (at mu = a) toward 0 as mu grows, so the
    set where it stays >= delta is an interval starting at a.
    """
    lo = a
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if bound(mid) >= delta:
            lo = mid
        else:
            hi = mid
    return lo


def _invert_lower(bound: Callable[[float], float], a: float, delta: float) -> float:
    """Smallest mu in [0, a] whose upper-tail bound at a stays >= delta.

    The bound increases from 0 (as mu -> 0) to 1 at mu = a.
    """
    lo = 0.0
    hi = a
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if bound(mid) >= delta:
            hi = mid
        else:
            lo = mid
    return hi


def confidence_interval(
    sample: Sample, selector: Selector, delta: float
) -> tuple[float, float]:
    """Conservative interval for the true selected weight.

    Entries at or above the sample threshold are kept deterministically
    and contribute their exact weight. Below the threshold each sampled
    entry contributes exactly one threshold unit, so the estimate is
    heavy_weight + threshold * X for an integer count X whose mean is
    the true light selected weight over the threshold. Inverting the
    count's tail bounds at level delta per side gives an interval whose
    true-value coverage is at least 1 - 2 * delta.

    When the selector is an explicit key collection the count of
    possibly-selected light keys caps X and the tight bound applies;
    a bare predicate gets the population-size-free bound. A sample with
    threshold 0 has no randomness and yields a degenerate interval.

    Raises:
        ValueError: If delta is outside (0, 1) or the sample's light
            entries do not sit at its threshold.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    predicate, key_set = _selector_parts(selector)
    tau = sample.threshold
    selected = [entry for entry in sample.entries if predicate(entry.key)]
    if tau == 0.0:
        point = math.fsum(entry.adjusted_weight for entry in selected)
        return (point, point)

    heavy = [entry for entry in selected if entry.original_weight >= tau]
    light = [entry for entry in selected if entry.original_weight < tau]
    for entry in light:
        if not math.isclose(entry.adjusted_weight, tau, rel_tol=1e-9):
            raise ValueError(
                f"entry {entry.key!r} has adjusted weight {entry.adjusted_weight}"
                f" off the threshold {tau}; not a threshold-form sample"
            )
    heavy_weight = math.fsum(entry.original_weight for entry in heavy)
    x_obs = float(len(light))

    if key_set is not None:
        m_cap = float(len(key_set) - len(heavy))
        if m_cap <= 0.0:
            return (heavy_weight, heavy_weight)
        mu_lo = 0.0 if x_obs == 0.0 else _invert_lower(
            lambda mu: _tail(m_cap, mu, x_obs), x_obs, delta
        )
        mu_hi = m_cap if x_obs >= m_cap else _invert_upper(
            lambda mu: _tail(m_cap, mu, x_obs), x_obs, m_cap, delta
        )
    else:
        mu_lo = 0.0 if x_obs == 0.0 else _invert_lower(
            lambda mu: _tail_loose(mu, x_obs), x_obs, delta
        )
        hi = max(2.0 * x_obs, 1.0)
        while _tail_loose(hi, x_obs) >= delta:
            hi *= 2.0
        mu_hi = _invert_upper(lambda mu: _tail_loose(mu, x_obs), x_obs, hi, delta)

    return (heavy_weight + tau * mu_lo, heavy_weight + tau * mu_hi)


@dataclass
class _SumState:
    """Raw accumulator sums over a block of trials; additive across blocks."""

    trials: int
    sum_dev: np.ndarray
    sum_sq: np.ndarray
    inclusion: np.ndarray
    outer: np.ndarray | None
    total_sum: float
    total_sq: float
    light_hist: np.ndarray
    sse: dict[str, float]


def _normalize_items(
    weights: Sequence[float] | Sequence[WeightedItem],
) -> list[WeightedItem]:
    items = list(weights)
    if items and isinstance(items[0], WeightedItem):
        return items  # type: ignore[return-value]
    return items_from_weights(items)  # type: ignore[arg-type]


def _partition_indices(
    partitions: Mapping[str, Sequence[Collection[Hashable]]] | None,
    index_of: Mapping[Hashable, int],
) -> dict[str, list[np.ndarray]]:
    if not partitions:
        return {}
    resolved: dict[str, list[np.ndarray]] = {}
    for label, groups in partitions.items():
        blocks: list[np.ndarray] = []
        for group in groups:
            try:
                blocks.append(
                    np.array(sorted(index_of[key] for key in group), dtype=np.intp)
                )
            except KeyError as exc:
                raise ValueError(
                    f"partition {label!r} names unknown key {exc.args[0]!r}"
                ) from None
        resolved[str(label)] = blocks
    return resolved


def _empirical_sums(
    sampler: Sampler,
    items: Sequence[WeightedItem],
    k: int,
    trials: int,
    seed: int,
    *,
    first_trial: int = 0,
    partition_ix: dict[str, list[np.ndarray]] | None = None,
    covariance: bool = False,
) -> _SumState:
    """Run trials [first_trial, first_trial + trials) and accumulate sums.

    Trial t always uses RandomSource(derive_seed(seed, t)), so splitting
    a run into blocks changes nothing but the float summation order.
    """
    n = len(items)
    truth = np.array([item.weight for item in items], dtype=np.float64)
    index_of = {item.key: i for i, item in enumerate(items)}
    tau = ipps_threshold([item.weight for item in items], k) if n else 0.0
    light_mask = truth < tau if tau > 0.0 else np.zeros(n, dtype=bool)
    partition_ix = partition_ix or {}

    state = _SumState(
        trials=trials,
        sum_dev=np.zeros(n),
        sum_sq=np.zeros(n),
        inclusion=np.zeros(n, dtype=np.int64),
        outer=np.zeros((n, n)) if covariance else None,
        total_sum=0.0,
        total_sq=0.0,
        light_hist=np.zeros(n + 1, dtype=np.int64),
        sse={label: 0.0 for label in partition_ix},
    )
    estimate = np.zeros(n)
    for t in range(first_trial, first_trial + trials):
        rng = RandomSource(derive_seed(seed, t))
        smp = sampler(items, k, rng)
        estimate[:] = 0.0
        for entry in smp.entries:
            estimate[index_of[entry.key]] = entry.adjusted_weight
        sampled = estimate > 0.0
        deviation = estimate - truth
        state.sum_dev += deviation
        state.sum_sq += deviation * deviation
        state.inclusion += sampled
        if state.outer is not None:
            state.outer += np.outer(deviation, deviation)
        total_dev = float(deviation.sum())
        state.total_sum += total_dev
        state.total_sq += total_dev * total_dev
        state.light_hist[int(np.count_nonzero(sampled & light_mask))] += 1
        for label, blocks in partition_ix.items():
            acc = 0.0
            for block in blocks:
                block_dev = float(deviation[block].sum())
                acc += block_dev * block_dev
            state.sse[label] += acc
    return state


def _combine_sums(blocks: Sequence[_SumState]) -> _SumState:
    """Fold per-block accumulators into one, in the order given."""
    first = blocks[0]
    combined = _SumState(
        trials=first.trials,
        sum_dev=first.sum_dev.copy(),
        sum_sq=first.sum_sq.copy(),
        inclusion=first.inclusion.copy(),
        outer=None if first.outer is None else first.outer.copy(),
        total_sum=first.total_sum,
        total_sq=first.total_sq,
        light_hist=first.light_hist.copy(),
        sse=dict(first.sse),
    )
    for block in blocks[1:]:
        combined.trials += block.trials
        combined.sum_dev += block.sum_dev
        combined.sum_sq += block.sum_sq
        combined.inclusion += block.inclusion
        if combined.outer is not None and block.outer is not None:
            combined.outer += block.outer
        combined.total_sum += block.total_sum
        combined.total_sq += block.total_sq
        combined.light_hist += block.light_hist
        for label, value in block.sse.items():
            combined.sse[label] += value
    return combined


def _finish_report(
    state: _SumState, truth: np.ndarray, source_trials: int
) -> EmpiricalReport:
    """Turn raw sums into population moments and an EmpiricalReport."""
    trials = state.trials
    mean_dev = state.sum_dev / trials
    item_var = np.maximum(0.0, state.sum_sq / trials - mean_dev * mean_dev)
    sigma_v = float(item_var.sum())
    mean_total = state.total_sum / trials
    v_sigma = max(0.0, state.total_sq / trials - mean_total * mean_total)
    covariance = None
    if state.outer is not None:
        covariance = state.outer / trials - np.outer(mean_dev, mean_dev)
    report = VarianceReport(
        sigma_v=sigma_v,
        v_sigma=v_sigma,
        n=len(truth),
        source=f"empirical({source_trials})",
    )
    return EmpiricalReport(
        report=report,
        trials=trials,
        item_means=truth + mean_dev,
        inclusion_counts=state.inclusion.copy(),
        covariance=covariance,
        partition_sse={label: value / trials for label, value in state.sse.items()},
        light_sampled_hist=state.light_hist.copy(),
    )


def empirical_report(
    sampler: Sampler,
    weights: Sequence[float] | Sequence[WeightedItem],
    k: int,
    trials: int,
    seed: int,
    *,
    partitions: Mapping[str, Sequence[Collection[Hashable]]] | None = None,
    covariance: bool = False,
) -> EmpiricalReport:
    """Measure a sampling scheme on a fixed instance by Monte Carlo.

    Runs the sampler for the given number of independent trials (trial
    t uses RandomSource(derive_seed(seed, t))) and reports empirical
    per-item and whole-population variance, mean estimates, inclusion
    counts, optional estimate covariances, and mean squared error per
    partition block for each labeled partition of the keys.

    A single trial reports all variances as exactly zero.

    Raises:
        ValueError: If trials < 1, the instance is empty, or a
            partition names a key outside the instance.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    items = _normalize_items(weights)
    if not items:
        raise ValueError("the instance must contain at least one item")
    index_of = {item.key: i for i, item in enumerate(items)}
    if len(index_of) != len(items):
        raise ValueError("duplicate keys in the instance")
    partition_ix = _partition_indices(partitions, index_of)
    state = _empirical_sums(
        sampler,
        items,
        k,
        trials,
        seed,
        partition_ix=partition_ix,
        covariance=covariance,
    )
    truth = np.array([item.weight for item in items], dtype=np.float64)
    return _finish_report(state, truth, trials)

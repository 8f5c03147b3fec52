"""Tests for the reference sampling schemes."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest

from varopt import (
    RandomSource,
    bad_instance,
    derive_seed,
    empirical_report,
    ipps_threshold,
    items_from_weights,
    poisson_ipps_sample,
    ppswor_order,
    ppswr_sample,
    priority_sample,
    sigma_v_analytic,
    uniform_sample,
)

FIVE = items_from_weights([1.0, 2.0, 3.0, 4.0, 5.0])


@pytest.mark.parametrize(
    "sampler", [uniform_sample, ppswr_sample, poisson_ipps_sample, priority_sample]
)
def test_samplers_reject_nonpositive_capacity(sampler) -> None:
    with pytest.raises(ValueError):
        sampler(FIVE, 0, RandomSource(0))


@pytest.mark.parametrize(
    "sampler", [uniform_sample, ppswr_sample, poisson_ipps_sample, priority_sample]
)
def test_samplers_are_unbiased_per_item(sampler) -> None:
    trials = 8000
    report = empirical_report(sampler, FIVE, 3, trials, 47, covariance=True)
    for i, item in enumerate(FIVE):
        se = math.sqrt(max(0.0, float(report.covariance[i, i])) / trials)
        assert report.item_means[i] == pytest.approx(item.weight, abs=4 * se + 1e-9)


def test_uniform_sample_returns_everything_when_capacity_covers() -> None:
    sample = uniform_sample(FIVE, 5, RandomSource(0))
    assert len(sample.entries) == 5
    assert all(e.adjusted_weight == e.original_weight for e in sample.entries)
    assert sample.threshold == 0.0
    assert sample.items_seen == 5


def test_uniform_sample_scales_by_population_over_capacity() -> None:
    sample = uniform_sample(FIVE, 2, RandomSource(3))
    assert len(sample.entries) == 2
    for entry in sample.entries:
        assert entry.adjusted_weight == pytest.approx(entry.original_weight * 5 / 2)
    assert sample.total_weight_seen == pytest.approx(15.0)

    counts = Counter()
    trials = 20000
    for t in range(trials):
        smp = uniform_sample(FIVE, 2, RandomSource(derive_seed(70, t)))
        for entry in smp.entries:
            counts[entry.key] += 1
    p = 2 / 5
    se = math.sqrt(p * (1 - p) / trials)
    for key in range(5):
        assert counts[key] / trials == pytest.approx(p, abs=4 * se)


def test_ppswr_sample_collapses_duplicates_and_caps_at_k() -> None:
    for t in range(200):
        smp = ppswr_sample(FIVE, 3, RandomSource(derive_seed(71, t)))
        keys = [e.key for e in smp.entries]
        assert 1 <= len(keys) <= 3
        assert len(keys) == len(set(keys))
        assert smp.threshold == 0.0


def test_ppswr_sample_hits_items_at_the_with_replacement_rate() -> None:
    trials = 20000
    hits = 0
    for t in range(trials):
        smp = ppswr_sample(FIVE, 3, RandomSource(derive_seed(72, t)))
        hits += any(e.key == 4 for e in smp.entries)
    expected = -math.expm1(3 * math.log1p(-5.0 / 15.0))
    se = math.sqrt(expected * (1 - expected) / trials)
    assert hits / trials == pytest.approx(expected, abs=4 * se)


def test_ppswr_sample_single_item_is_exact() -> None:
    solo = items_from_weights([7.0])
    smp = ppswr_sample(solo, 4, RandomSource(1))
    assert len(smp.entries) == 1
    assert smp.entries[0].adjusted_weight == pytest.approx(7.0)


def test_poisson_sample_keeps_heavies_and_sizes_k_in_expectation() -> None:
    items = items_from_weights([60.0, 45.0] + [1.0 + 0.5 * i for i in range(18)])
    weights = [item.weight for item in items]
    k = 5
    tau = ipps_threshold(weights, k)
    probabilities = [min(1.0, w / tau) for w in weights]
    size_var = sum(p * (1 - p) for p in probabilities)

    trials = 20000
    sizes = []
    for t in range(trials):
        smp = poisson_ipps_sample(items, k, RandomSource(derive_seed(73, t)))
        assert smp.threshold == tau
        kept = smp.by_key()
        assert kept[0].adjusted_weight == 60.0
        assert kept[1].adjusted_weight == 45.0
        for entry in smp.entries:
            if entry.original_weight < tau:
                assert entry.adjusted_weight == tau
        sizes.append(len(smp.entries))
    se = math.sqrt(size_var / trials)
    assert float(np.mean(sizes)) == pytest.approx(k, abs=4 * se)
    # Unlike the reservoir schemes the size genuinely fluctuates.
    assert len(set(sizes)) > 1


def test_poisson_sample_underfull_instance_is_verbatim() -> None:
    smp = poisson_ipps_sample(FIVE, 9, RandomSource(0))
    assert len(smp.entries) == 5
    assert smp.threshold == 0.0
    assert all(e.adjusted_weight == e.original_weight for e in smp.entries)


def test_priority_sample_keeps_exactly_k_and_adjusts_to_the_cut() -> None:
    for t in range(300):
        smp = priority_sample(FIVE, 3, RandomSource(derive_seed(74, t)))
        assert len(smp.entries) == 3
        assert smp.threshold > 0.0
        for entry in smp.entries:
            assert entry.adjusted_weight == pytest.approx(
                max(entry.original_weight, smp.threshold)
            )
    verbatim = priority_sample(FIVE, 5, RandomSource(0))
    assert all(e.adjusted_weight == e.original_weight for e in verbatim.entries)


def test_priority_sample_prefers_heavy_items() -> None:
    trials = 20000
    heavy_hits = 0
    light_hits = 0
    for t in range(trials):
        smp = priority_sample(FIVE, 2, RandomSource(derive_seed(75, t)))
        keys = {e.key for e in smp.entries}
        heavy_hits += 4 in keys
        light_hits += 0 in keys
    assert heavy_hits > light_hits * 2


def test_ppswor_order_prefix_and_permutation() -> None:
    rng_full = RandomSource(derive_seed(76, "shared"))
    rng_short = RandomSource(derive_seed(76, "shared"))
    full = ppswor_order(FIVE, 5, rng_full)
    short = ppswor_order(FIVE, 3, rng_short)
    assert full[:3] == short
    assert sorted(full) == [0, 1, 2, 3, 4]
    assert ppswor_order(FIVE, 0, RandomSource(0)) == []
    assert len(ppswor_order(FIVE, 99, RandomSource(0))) == 5
    with pytest.raises(ValueError):
        ppswor_order(FIVE, -1, RandomSource(0))


def test_ppswor_order_first_draw_is_weight_proportional() -> None:
    pair = items_from_weights([1.0, 3.0])
    trials = 20000
    first_heavy = 0
    for t in range(trials):
        order = ppswor_order(pair, 1, RandomSource(derive_seed(77, t)))
        first_heavy += order[0] == 1
    se = math.sqrt(0.75 * 0.25 / trials)
    assert first_heavy / trials == pytest.approx(0.75, abs=4 * se)


def test_bad_instance_shape_threshold_and_variance() -> None:
    items = bad_instance(3, 5)
    weights = [item.weight for item in items]
    assert weights == [5.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0]
    assert ipps_threshold(weights, 3) == pytest.approx(5.0, rel=1e-12)
    assert sigma_v_analytic(weights, 3) == pytest.approx(5.0 * 4.0, rel=1e-12)

    big = bad_instance(100, 10000)
    assert len(big) == 99 + 10000
    big_weights = [item.weight for item in big]
    assert ipps_threshold(big_weights, 100) == pytest.approx(10000.0, rel=1e-12)
    assert sigma_v_analytic(big_weights, 100) == pytest.approx(99990000.0, rel=1e-12)

    with pytest.raises(ValueError):
        bad_instance(1, 5)
    with pytest.raises(ValueError):
        bad_instance(3, 0)

"""Tests for estimation, variance formulas, tail bounds, and the harness."""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np
import pytest

from varopt import (
    RandomSource,
    Sample,
    SampleEntry,
    aux_variance,
    chernoff_bound,
    chernoff_bound_loose,
    confidence_interval,
    derive_seed,
    empirical_report,
    ipps_threshold,
    items_from_weights,
    poisson_ipps_sample,
    sigma_v_analytic,
    subset_estimate,
    v_m,
    varopt_sample,
    w_p,
)
from varopt.stats import _tail, _tail_loose


def varopt_sampler(items, k, rng):
    return varopt_sample(items, k, rng)


def test_subset_estimate_covers_the_selector_forms() -> None:
    items = items_from_weights([1.0, 2.0, 3.0, 4.0])
    sample = varopt_sample(items, 2, RandomSource(4))
    total = sum(w for w in (1.0, 2.0, 3.0, 4.0))
    assert subset_estimate(sample, range(4)) == pytest.approx(total, rel=1e-9)
    assert subset_estimate(sample, lambda key: True) == pytest.approx(total, rel=1e-9)
    assert subset_estimate(sample, []) == 0.0
    keys = {e.key for e in sample.entries}
    first = next(iter(keys))
    assert subset_estimate(sample, [first]) == subset_estimate(sample, lambda k: k == first)


def test_sigma_v_analytic_worked_examples() -> None:
    # Threshold 5 for {1,2,3,4} at k=2; every item is light.
    assert sigma_v_analytic([1.0, 2.0, 3.0, 4.0], 2) == pytest.approx(20.0, rel=1e-12)
    # Two unit items at k=1: threshold 2, each contributes 1.
    assert sigma_v_analytic([1.0, 1.0], 1) == pytest.approx(2.0, rel=1e-12)
    # Capacity covers the instance: no variance at all.
    assert sigma_v_analytic([5.0, 7.0], 3) == 0.0
    # A dominant item is pinned and contributes nothing.
    heavy_tau = ipps_threshold([10.0, 1.0, 1.0], 2)
    assert heavy_tau == pytest.approx(2.0)
    assert sigma_v_analytic([10.0, 1.0, 1.0], 2) == pytest.approx(2.0, rel=1e-12)


def test_v_m_interpolates_between_the_extremes() -> None:
    assert v_m(20.0, 0.0, 4, 1) == pytest.approx(5.0, rel=1e-12)
    assert v_m(20.0, 0.0, 4, 2) == pytest.approx(20.0 / 3.0, rel=1e-12)
    assert v_m(20.0, 0.0, 4, 4) == 0.0
    assert v_m(20.0, 7.0, 4, 4) == pytest.approx(7.0, rel=1e-12)
    assert v_m(20.0, 7.0, 4, 1) == pytest.approx(5.0, rel=1e-12)
    with pytest.raises(ValueError):
        v_m(1.0, 0.0, 1, 1)
    with pytest.raises(ValueError):
        v_m(1.0, 0.0, 4, 0)
    with pytest.raises(ValueError):
        v_m(1.0, 0.0, 4, 5)


def test_w_p_matches_its_closed_form() -> None:
    assert w_p(20.0, 0.0, 0.5) == pytest.approx(5.0, rel=1e-12)
    assert w_p(20.0, 7.0, 1.0) == pytest.approx(7.0, rel=1e-12)
    assert w_p(20.0, 7.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        w_p(1.0, 0.0, 1.5)
    with pytest.raises(ValueError):
        w_p(1.0, 0.0, -0.1)


def test_aux_variance_generalizes_w_p() -> None:
    for sigma_v, v_sigma, p in [(20.0, 0.0, 0.3), (5.0, 2.0, 0.8), (1.0, 1.0, 1.0)]:
        bernoulli = aux_variance(sigma_v, v_sigma, p, p * (1.0 - p))
        assert bernoulli == pytest.approx(w_p(sigma_v, v_sigma, p), rel=1e-12)
    # A deterministic unit multiplier leaves only the population variance.
    assert aux_variance(20.0, 7.0, 1.0, 0.0) == pytest.approx(7.0, rel=1e-12)
    with pytest.raises(ValueError):
        aux_variance(1.0, 1.0, 1.0, -0.5)


def test_chernoff_bound_frozen_values() -> None:
    # (m, mu, a) = (10, 2, 4) reduces to (4/3)**6 / 16 = 256/729 exactly.
    assert chernoff_bound(10.0, 2.0, 4.0) == pytest.approx(256.0 / 729.0, rel=1e-12)
    assert chernoff_bound(10.0, 2.0, 4.0) == pytest.approx(0.35116598079561043, rel=1e-12)
    # Lower tail at a = 1: 2 * (8/9)**9.
    assert chernoff_bound(10.0, 2.0, 1.0) == pytest.approx(0.6928788322292371, rel=1e-12)
    # Loose versions: e**2/16 and 2/e.
    assert chernoff_bound_loose(2.0, 4.0) == pytest.approx(0.4618160061831656, rel=1e-12)
    assert chernoff_bound_loose(2.0, 1.0) == pytest.approx(2.0 / math.e, rel=1e-12)


def test_chernoff_bound_against_high_precision_evaluation() -> None:
    mpmath.mp.dps = 50
    for m, mu, a in [(10, 2, 4), (10, 2, 1), (100, 30, 50), (7, 6.5, 1.25), (3, 1, 2.9)]:
        m_, mu_, a_ = map(mpmath.mpf, (m, mu, a))
        expected = ((m_ - mu_) / (m_ - a_)) ** (m_ - a_) * (mu_ / a_) ** a_
        expected = min(mpmath.mpf(1), expected)
        assert chernoff_bound(float(m), float(mu), float(a)) == pytest.approx(
            float(expected), rel=1e-12
        )
    for mu, a in [(2, 4), (2, 1), (30, 50), (6.5, 1.25)]:
        mu_, a_ = map(mpmath.mpf, (mu, a))
        expected = min(mpmath.mpf(1), mpmath.e ** (a_ - mu_) * (mu_ / a_) ** a_)
        assert chernoff_bound_loose(float(mu), float(a)) == pytest.approx(
            float(expected), rel=1e-12
        )


def test_chernoff_bound_shape_and_domination() -> None:
    assert chernoff_bound(10.0, 3.0, 3.0) == 1.0
    assert chernoff_bound_loose(3.0, 3.0) == 1.0
    # The loose bound never beats the tight one.
    for m in (5.0, 12.0, 64.0):
        for mu in (1.0, 2.5, m / 2):
            for a in (0.5, mu * 0.7, mu * 1.3, m - 0.5):
                if not (0.0 < a < m and 0.0 < mu < m):
                    continue
                assert chernoff_bound(m, mu, a) <= chernoff_bound_loose(mu, a) + 1e-15
    # Moving a away from mu can only shrink the upper tail.
    values = [chernoff_bound(20.0, 4.0, a) for a in (5.0, 7.0, 9.0, 11.0)]
    assert values == sorted(values, reverse=True)


def test_chernoff_bound_domain_errors() -> None:
    for m, mu, a in [(10, 2, 0), (10, 2, 10), (10, 0, 4), (10, 10, 4), (math.inf, 2, 4)]:
        with pytest.raises(ValueError):
            chernoff_bound(float(m), float(mu), float(a))
    for mu, a in [(0, 1), (1, 0), (math.inf, 1)]:
        with pytest.raises(ValueError):
            chernoff_bound_loose(float(mu), float(a))


def test_tail_helpers_extend_to_the_endpoints() -> None:
    assert _tail(5.0, 2.0, 0.0) == pytest.approx((3.0 / 5.0) ** 5, rel=1e-12)
    assert _tail(5.0, 2.0, 5.0) == pytest.approx((2.0 / 5.0) ** 5, rel=1e-12)
    assert _tail(5.0, 2.0, 3.0) == chernoff_bound(5.0, 2.0, 3.0)
    assert _tail_loose(2.0, 0.0) == pytest.approx(math.exp(-2.0), rel=1e-12)
    assert _tail_loose(2.0, 3.0) == chernoff_bound_loose(2.0, 3.0)


def test_confidence_interval_degenerate_cases() -> None:
    # Underfull sample: no randomness, the point estimate is exact.
    items = items_from_weights([2.0, 3.0])
    sample = varopt_sample(items, 5, RandomSource(0))
    assert confidence_interval(sample, [0, 1], 0.05) == (5.0, 5.0)
    assert confidence_interval(sample, [0], 0.05) == (2.0, 2.0)

    # Full sample, empty selector.
    sample = varopt_sample(items_from_weights([1.0] * 12), 3, RandomSource(1))
    assert confidence_interval(sample, [], 0.05) == (0.0, 0.0)

    # Selecting only always-kept keys is also exact.
    heavy_items = items_from_weights([60.0, 45.0] + [1.0 + 0.5 * i for i in range(18)])
    sample = varopt_sample(heavy_items, 5, RandomSource(2))
    assert sample.threshold == pytest.approx(31.5)
    assert confidence_interval(sample, [0, 1], 0.05) == (105.0, 105.0)

    with pytest.raises(ValueError):
        confidence_interval(sample, [0], 0.0)
    with pytest.raises(ValueError):
        confidence_interval(sample, [0], 1.0)


def test_confidence_interval_rejects_off_threshold_samples() -> None:
    crooked = Sample(
        entries=(
            SampleEntry(key="a", adjusted_weight=1.5, original_weight=1.0),
            SampleEntry(key="b", adjusted_weight=2.0, original_weight=1.0),
        ),
        capacity_k=2,
        threshold=2.0,
        total_weight_seen=4.0,
        items_seen=4,
    )
    with pytest.raises(ValueError):
        confidence_interval(crooked, ["a", "b"], 0.05)


def test_confidence_interval_brackets_the_estimate_and_nests() -> None:
    items = items_from_weights([1.0] * 20)
    selected = list(range(8))
    for t in range(50):
        sample = varopt_sample(items, 5, RandomSource(derive_seed(55, t)))
        point = subset_estimate(sample, selected)
        lo_tight, hi_tight = confidence_interval(sample, selected, 0.05)
        lo_loose, hi_loose = confidence_interval(
            sample, lambda key: key in set(selected), 0.05
        )
        assert lo_tight <= point <= hi_tight
        assert lo_loose <= point <= hi_loose
        # Knowing the selected population size can only help.
        assert lo_loose <= lo_tight + 1e-9
        assert hi_tight <= hi_loose + 1e-9


def test_confidence_interval_coverage_exceeds_the_nominal_level() -> None:
    items = items_from_weights([1.0] * 20)
    selected = list(range(8))
    truth = 8.0
    delta = 0.05
    trials = 2000
    covered_tight = 0
    covered_loose = 0
    for t in range(trials):
        sample = varopt_sample(items, 5, RandomSource(derive_seed(56, t)))
        lo, hi = confidence_interval(sample, selected, delta)
        covered_tight += lo <= truth <= hi
        lo, hi = confidence_interval(sample, lambda key: key < 8, delta)
        covered_loose += lo <= truth <= hi
    assert covered_tight / trials >= 1.0 - 2.0 * delta
    assert covered_loose / trials >= 1.0 - 2.0 * delta


def test_empirical_report_single_trial_reports_exact_zero_variance() -> None:
    report = empirical_report(varopt_sampler, [1.0, 2.0, 3.0, 4.0], 2, 1, 7)
    assert report.report.sigma_v == 0.0
    assert report.report.v_sigma == 0.0
    assert report.trials == 1
    assert report.report.source == "empirical(1)"


def test_empirical_report_matches_analytic_variance_for_varopt() -> None:
    weights = [1.0, 2.0, 3.0, 4.0]
    trials = 20000
    report = empirical_report(varopt_sampler, weights, 2, trials, 11)
    assert report.report.sigma_v == pytest.approx(20.0, rel=0.05)
    # Exact-total schemes cancel per-item errors to rounding noise.
    assert report.report.v_sigma < 1e-12
    tau = ipps_threshold(weights, 2)
    for i, w in enumerate(weights):
        p = min(1.0, w / tau)
        se = math.sqrt(p * (1.0 - p) / trials)
        assert report.inclusion_counts[i] / trials == pytest.approx(p, abs=4 * se)
        item_se = math.sqrt(w * (tau - w) / trials) if w < tau else 0.0
        assert report.item_means[i] == pytest.approx(w, abs=4 * item_se + 1e-9)
    # Two of the four light items are sampled in every trial.
    assert report.light_sampled_hist[2] == trials
    assert report.light_sampled_hist.sum() == trials


def test_empirical_report_poisson_population_variance_is_not_cancelled() -> None:
    weights = [1.0, 2.0, 3.0, 4.0]
    trials = 20000
    report = empirical_report(poisson_ipps_sample, weights, 2, trials, 13)
    assert report.report.sigma_v == pytest.approx(20.0, rel=0.08)
    # Independent inclusions: population variance equals the item sum.
    assert report.report.v_sigma == pytest.approx(report.report.sigma_v, rel=0.10)
    assert report.light_sampled_hist.sum() == trials
    assert report.light_sampled_hist[2] < trials


def test_empirical_report_partition_sse_tracks_block_variances() -> None:
    weights = [1.0, 2.0, 3.0, 4.0]
    trials = 8000
    report = empirical_report(
        varopt_sampler,
        weights,
        2,
        trials,
        17,
        partitions={
            "singletons": [[0], [1], [2], [3]],
            "whole": [[0, 1, 2, 3]],
        },
    )
    assert report.partition_sse["singletons"] == pytest.approx(
        report.report.sigma_v, rel=0.02
    )
    assert report.partition_sse["whole"] < 1e-12


def test_empirical_report_covariance_moments_are_internally_consistent() -> None:
    weights = [1.0, 2.0, 4.0, 8.0, 16.0]
    trials = 3000
    report = empirical_report(varopt_sampler, weights, 2, trials, 19, covariance=True)
    cov = report.covariance
    assert cov is not None and cov.shape == (5, 5)
    assert np.allclose(cov, cov.T, atol=1e-12)
    assert float(np.trace(cov)) == pytest.approx(report.report.sigma_v, abs=1e-9)
    assert float(cov.sum()) == pytest.approx(report.report.v_sigma, abs=1e-9)


@pytest.mark.parametrize("sampler", [varopt_sampler, poisson_ipps_sample])
def test_v_m_is_an_identity_in_the_empirical_moments(sampler) -> None:
    # For any scheme, averaging the subset variance over all m-subsets
    # must reproduce the interpolation formula applied to the empirical
    # covariance moments. This is algebra, not sampling, so the match is
    # tight even at a small trial count.
    weights = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    n = len(weights)
    report = empirical_report(sampler, weights, 2, 2000, 23, covariance=True)
    cov = report.covariance
    trace = float(np.trace(cov))
    total = float(cov.sum())
    for m in range(1, n + 1):
        direct = 0.0
        count = 0
        for subset in itertools.combinations(range(n), m):
            idx = np.array(subset)
            direct += float(cov[np.ix_(idx, idx)].sum())
            count += 1
        direct /= count
        assert v_m(trace, total, n, m) == pytest.approx(direct, rel=1e-9, abs=1e-12)


def test_empirical_report_validates_its_inputs() -> None:
    with pytest.raises(ValueError):
        empirical_report(varopt_sampler, [1.0], 1, 0, 0)
    with pytest.raises(ValueError):
        empirical_report(varopt_sampler, [], 1, 10, 0)
    with pytest.raises(ValueError):
        empirical_report(
            varopt_sampler, [1.0, 2.0], 1, 10, 0, partitions={"p": [[99]]}
        )
    items = [
        items_from_weights([1.0, 2.0])[0],
        items_from_weights([1.0, 2.0])[0],
    ]
    with pytest.raises(ValueError):
        empirical_report(varopt_sampler, items, 1, 10, 0)


def test_empirical_report_is_reproducible_for_a_fixed_seed() -> None:
    a = empirical_report(varopt_sampler, [1.0, 2.0, 3.0], 2, 500, 29)
    b = empirical_report(varopt_sampler, [1.0, 2.0, 3.0], 2, 500, 29)
    assert a.report.sigma_v == b.report.sigma_v
    assert a.report.v_sigma == b.report.v_sigma
    assert np.array_equal(a.inclusion_counts, b.inclusion_counts)


def test_variance_report_renders_and_validates() -> None:
    report = empirical_report(varopt_sampler, [1.0, 2.0, 3.0], 2, 100, 31).report
    tsv = report.to_tsv()
    header, values = tsv.strip().split("\n")
    assert header.split("\t") == ["sigma_v", "v_sigma", "n", "source"]
    assert values.split("\t")[2] == "3"
    assert "sigma_v=" in report.summary()
    with pytest.raises(ValueError):
        type(report)(sigma_v=-1.0, v_sigma=0.0, n=1, source="analytic")
    with pytest.raises(ValueError):
        type(report)(sigma_v=0.0, v_sigma=math.nan, n=1, source="analytic")

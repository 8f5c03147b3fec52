"""Reference sampling schemes to compare the reservoir against.

Each scheme takes the full item list up front (none of these are
streaming), draws from the supplied RandomSource, and returns a Sample
whose adjusted weights make subset-sum estimation unbiased under that
scheme. They cover the classical design space: uniform selection,
probability-proportional-to-size with replacement, independent
per-item inclusion at the optimal threshold, priority sampling, and
weighted sampling without replacement in draw order.

bad_instance builds the weight profile that separates these schemes
most sharply: a few equally heavy items plus a tail of unit items.
"""

from __future__ import annotations

import math
from typing import Hashable, Sequence

import numpy as np

from .core import (
    RandomSource,
    Sample,
    SampleEntry,
    WeightedItem,
    ipps_threshold,
    items_from_weights,
)

__all__ = [
    "uniform_sample",
    "ppswr_sample",
    "poisson_ipps_sample",
    "priority_sample",
    "ppswor_order",
    "bad_instance",
]


def _prepared(
    items: Sequence[WeightedItem], k: int
) -> tuple[list[WeightedItem], np.ndarray, float]:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    items = list(items)
    weights = np.array([item.weight for item in items], dtype=np.float64)
    return items, weights, float(math.fsum(weights.tolist()))


def _verbatim(items: Sequence[WeightedItem], k: int, total: float) -> Sample:
    entries = tuple(
        SampleEntry(key=item.key, adjusted_weight=item.weight, original_weight=item.weight)
        for item in items
    )
    return Sample(
        entries=entries,
        capacity_k=k,
        threshold=0.0,
        total_weight_seen=total,
        items_seen=len(items),
    )


def uniform_sample(items: Sequence[WeightedItem], k: int, rng: RandomSource) -> Sample:
    """Keep k items chosen uniformly without replacement.

    Every kept item's weight is scaled by n / k, which is unbiased but
    ignores the weights entirely when choosing. With k >= n the whole
    instance is returned unscaled.
    """
    items, _, total = _prepared(items, k)
    n = len(items)
    if k >= n:
        return _verbatim(items, k, total)
    index = list(range(n))
    for j in range(k):
        pick = j + int(rng.next_uniform() * (n - j))
        index[j], index[pick] = index[pick], index[j]
    chosen = sorted(index[:k])
    factor = n / k
    entries = tuple(
        SampleEntry(
            key=items[i].key,
            adjusted_weight=items[i].weight * factor,
            original_weight=items[i].weight,
        )
        for i in chosen
    )
    return Sample(
        entries=entries,
        capacity_k=k,
        threshold=0.0,
        total_weight_seen=total,
        items_seen=n,
    )


def ppswr_sample(items: Sequence[WeightedItem], k: int, rng: RandomSource) -> Sample:
    """Draw k times proportionally to weight, with replacement.

    The sample contains the distinct items hit at least once; item i
    appears with probability p_i = 1 - (1 - w_i / W)**k and its
    adjusted weight w_i / p_i makes the estimate unbiased. Duplicated
    hits collapse, so the sample can hold fewer than k entries.
    """
    items, weights, total = _prepared(items, k)
    n = len(items)
    if n == 0:
        return _verbatim(items, k, total)
    cumulative = np.cumsum(weights)
    draws = np.asarray(rng.uniforms(k)) * total
    positions = np.minimum(np.searchsorted(cumulative, draws, side="right"), n - 1)
    entries = []
    for i in sorted(set(int(p) for p in positions)):
        w = float(weights[i])
        if w >= total:
            probability = 1.0
        else:
            probability = -math.expm1(k * math.log1p(-w / total))
        entries.append(
            SampleEntry(
                key=items[i].key,
                adjusted_weight=w / probability,
                original_weight=w,
            )
        )
    return Sample(
        entries=tuple(entries),
        capacity_k=k,
        threshold=0.0,
        total_weight_seen=total,
        items_seen=n,
    )


def poisson_ipps_sample(
    items: Sequence[WeightedItem], k: int, rng: RandomSource
) -> Sample:
    """Include each item independently at the optimal inclusion rates.

    Items at or above the instance threshold are always kept at their
    own weight; each lighter item is kept with probability w / threshold
    and adjusted to the threshold. The sample size is k in expectation
    only, which is exactly the slack the reservoir schemes remove.
    """
    items, weights, total = _prepared(items, k)
    tau = ipps_threshold(weights.tolist(), k)
    if tau == 0.0:
        return _verbatim(items, k, total)
    light_count = int(np.count_nonzero(weights < tau))
    draws = rng.uniforms(light_count)
    entries = []
    position = 0
    for item in items:
        if item.weight >= tau:
            entries.append(
                SampleEntry(
                    key=item.key,
                    adjusted_weight=item.weight,
                    original_weight=item.weight,
                )
            )
        else:
            keep = draws[position] < item.weight / tau
            position += 1
            if keep:
                entries.append(
                    SampleEntry(
                        key=item.key, adjusted_weight=tau, original_weight=item.weight
                    )
                )
    return Sample(
        entries=tuple(entries),
        capacity_k=k,
        threshold=tau,
        total_weight_seen=total,
        items_seen=len(items),
    )


def priority_sample(items: Sequence[WeightedItem], k: int, rng: RandomSource) -> Sample:
    """Keep the k highest-priority items, priority being w / uniform.

    The (k+1)-st priority becomes the sample's threshold; every kept
    item is adjusted to max(w, threshold). With k >= n the whole
    instance is returned unscaled.
    """
    items, weights, total = _prepared(items, k)
    n = len(items)
    if k >= n:
        return _verbatim(items, k, total)
    draws = np.asarray(rng.uniforms(n))
    priorities = weights / draws
    top = np.argpartition(-priorities, k)[: k + 1]
    by_priority = top[np.argsort(-priorities[top], kind="stable")]
    kept = sorted(int(i) for i in by_priority[:k])
    tau_p = float(priorities[by_priority[k]])
    entries = tuple(
        SampleEntry(
            key=items[i].key,
            adjusted_weight=max(float(weights[i]), tau_p),
            original_weight=float(weights[i]),
        )
        for i in kept
    )
    return Sample(
        entries=entries,
        capacity_k=k,
        threshold=tau_p,
        total_weight_seen=total,
        items_seen=n,
    )


def ppswor_order(
    items: Sequence[WeightedItem], count: int, rng: RandomSource
) -> list[Hashable]:
    """First keys drawn by weighted sampling without replacement.

    Equivalent to repeatedly drawing proportionally to weight among the
    remaining items; implemented by ranking items on exponential draws
    divided by weight. Asking for count >= n returns a full permutation.

    Raises:
        ValueError: If count is negative.
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    items, weights, _ = _prepared(items, 1)
    n = len(items)
    if count == 0 or n == 0:
        return []
    draws = np.asarray(rng.uniforms(n))
    ranks = -np.log(draws) / weights
    if count >= n:
        ordered = np.argsort(ranks, kind="stable")
    else:
        first = np.argpartition(ranks, count)[:count]
        ordered = first[np.argsort(ranks[first], kind="stable")]
    return [items[int(i)].key for i in ordered]


def bad_instance(k: int, ell: int) -> list[WeightedItem]:
    """Weight profile on which size-biased schemes oversample badly.

    k - 1 items of weight ell followed by ell items of unit weight.
    A capacity-k optimal sample keeps every heavy item and exactly one
    unit item, while with-replacement schemes keep drawing heavies and
    without-replacement draw-order schemes need about ln(k) unit slots.

    Raises:
        ValueError: If k < 2 or ell < 1.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if ell < 1:
        raise ValueError(f"ell must be >= 1, got {ell}")
    return items_from_weights([float(ell)] * (k - 1) + [1.0] * ell)

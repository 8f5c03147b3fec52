"""Core types and sampling primitives for variance-optimal weighted sampling.

This module holds the pieces everything else is built from:

- value types for stream items, sample entries, and finished samples
- a seedable, replayable source of uniform random reals in (0, 1)
- the threshold equation solver (``ipps_threshold``) that turns a weight
  multiset and a capacity into the unique inclusion-probability threshold
- the one-item drop step (``select_drop``) that reduces k+1 weighted
  entries to k while keeping the adjusted-weight total exact

Key properties maintained here:
    1. Inclusion probabilities are min(1, w/tau) with tau solving
       sum(min(1, w_i/tau)) = k.
    2. The drop step removes exactly one entry, chosen so that dropping
       entry i happens with probability 1 - min(1, w_i/tau).
    3. The adjusted-weight total is preserved exactly by every drop.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

__all__ = [
    "ConsistencyError",
    "WeightedItem",
    "SampleEntry",
    "Sample",
    "RandomSource",
    "derive_seed",
    "ipps_threshold",
    "inclusion_probability",
    "select_drop",
    "check_varopt_sample",
    "items_from_weights",
]

_U64 = 0xFFFFFFFFFFFFFFFF

#: Relative tolerance for cross-module equality assertions.
REL_TOL = 1e-9

#: Relative tolerance for internal consistency checks (threshold equation,
#: drop-segment mass).
CONSISTENCY_TOL = 1e-12


class ConsistencyError(RuntimeError):
    """An internal invariant that should hold by construction was violated."""


def _validate_weight(weight: float, what: str = "weight") -> float:
    weight = float(weight)
    if not math.isfinite(weight) or weight <= 0.0:
        raise ValueError(f"{what} must be a positive finite real, got {weight!r}")
    return weight


@dataclass(frozen=True, slots=True)
class WeightedItem:
    """A stream element: opaque key plus positive weight.

    Args:
        key: Unique identifier within a stream (scalar or short string).
        weight: Positive finite real mass.
        arrival_index: Position in the stream. Stamped at ingestion; a
            reservoir uses its own item counter as the authoritative
            position, so builders of ad-hoc item lists may leave this 0.
    """

    key: Hashable
    weight: float
    arrival_index: int = 0

    def __post_init__(self) -> None:
        _validate_weight(self.weight)
        if self.arrival_index < 0:
            raise ValueError(
                f"arrival_index must be nonnegative, got {self.arrival_index}"
            )


@dataclass(frozen=True, slots=True)
class SampleEntry:
    """An adjusted-weight record for one sampled item.

    ``adjusted_weight`` is the unbiased estimate stored with the item
    (``max(original_weight, tau)`` for the call that produced it);
    ``original_weight`` is retained for diagnostics and confidence bounds.
    Across merges the adjusted weight of an entry may drop below what an
    earlier stage assigned, so no ordering between the two fields is
    enforced here.
    """

    key: Hashable
    adjusted_weight: float
    original_weight: float

    def __post_init__(self) -> None:
        _validate_weight(self.adjusted_weight, "adjusted_weight")
        _validate_weight(self.original_weight, "original_weight")


@dataclass(frozen=True, slots=True)
class Sample:
    """A capacity-bounded collection of sample entries plus its threshold.

    This is the unit of estimation and merging. Construction checks only
    structural sanity (unique keys, finite fields); the stronger
    variance-optimal invariants (exact size, exact total, threshold form)
    are checked by :func:`check_varopt_sample`, because competitor schemes
    reuse this type for their outputs and deliberately violate them.
    """

    entries: tuple[SampleEntry, ...]
    capacity_k: int
    threshold: float
    total_weight_seen: float
    items_seen: int

    def __post_init__(self) -> None:
        if not isinstance(self.entries, tuple):
            object.__setattr__(self, "entries", tuple(self.entries))
        if self.capacity_k < 1:
            raise ValueError(f"capacity_k must be >= 1, got {self.capacity_k}")
        if self.items_seen < 0:
            raise ValueError(f"items_seen must be >= 0, got {self.items_seen}")
        if not math.isfinite(self.threshold) or self.threshold < 0.0:
            raise ValueError(f"threshold must be finite and >= 0, got {self.threshold}")
        if not math.isfinite(self.total_weight_seen) or self.total_weight_seen < 0.0:
            raise ValueError(
                f"total_weight_seen must be finite and >= 0, got {self.total_weight_seen}"
            )
        seen: set[Hashable] = set()
        for entry in self.entries:
            if entry.key in seen:
                raise ValueError(f"duplicate key in sample: {entry.key!r}")
            seen.add(entry.key)

    def __len__(self) -> int:
        return len(self.entries)

    def by_key(self) -> dict[Hashable, SampleEntry]:
        """Return entries as a key-indexed dict (built per call)."""
        return {entry.key: entry for entry in self.entries}

    def total_adjusted(self) -> float:
        """Exact (compensated) sum of adjusted weights over all entries."""
        return math.fsum(entry.adjusted_weight for entry in self.entries)


def check_varopt_sample(
    sample: Sample,
    *,
    rel_tol: float = REL_TOL,
    require_threshold_form: bool = True,
) -> None:
    """Check the invariants a variance-optimal sampler must deliver.

    Verifies exact sample size (min(k, items_seen)), the exact-total
    property (adjusted sum equals total weight seen within ``rel_tol``),
    and, if ``require_threshold_form``, the per-entry rule: entries above
    the threshold keep their original weight, all others sit exactly at
    the threshold.

    Raises:
        ConsistencyError: If any invariant fails.
    """
    expected_size = min(sample.capacity_k, sample.items_seen)
    if len(sample.entries) != expected_size:
        raise ConsistencyError(
            f"sample holds {len(sample.entries)} entries, expected "
            f"min(k={sample.capacity_k}, n={sample.items_seen}) = {expected_size}"
        )
    total = sample.total_adjusted()
    if not math.isclose(
        total, sample.total_weight_seen, rel_tol=rel_tol, abs_tol=1e-12
    ):
        raise ConsistencyError(
            f"adjusted total {total!r} does not match weight seen "
            f"{sample.total_weight_seen!r}"
        )
    if not require_threshold_form:
        return
    tau = sample.threshold
    for entry in sample.entries:
        if entry.original_weight > tau:
            if entry.adjusted_weight != entry.original_weight:
                raise ConsistencyError(
                    f"entry {entry.key!r} is above the threshold but its adjusted "
                    f"weight {entry.adjusted_weight!r} differs from its original "
                    f"{entry.original_weight!r}"
                )
        elif entry.adjusted_weight != tau:
            raise ConsistencyError(
                f"entry {entry.key!r} is at or below the threshold {tau!r} but "
                f"carries adjusted weight {entry.adjusted_weight!r}"
            )


def items_from_weights(weights: Iterable[float]) -> list[WeightedItem]:
    """Build a WeightedItem list from bare weights, keyed by position."""
    return [
        WeightedItem(key=i, weight=float(w), arrival_index=i)
        for i, w in enumerate(weights)
    ]


def derive_seed(seed: int, *labels: object) -> int:
    """Derive a child seed from a parent seed and a label path.

    Uses SHA-256 over a canonical encoding, so the derivation is stable
    across processes and platforms (unlike the builtin salted ``hash``).
    Labels may be ints or strings; order matters.
    """
    hasher = hashlib.sha256()
    hasher.update(b"varopt-seed")
    hasher.update((int(seed) & _U64).to_bytes(8, "little"))
    for label in labels:
        if isinstance(label, int) and not isinstance(label, bool):
            hasher.update(b"\x1fi")
            hasher.update(label.to_bytes(16, "little", signed=True))
        elif isinstance(label, str):
            hasher.update(b"\x1fs")
            hasher.update(label.encode("utf-8"))
        else:
            raise TypeError(f"seed labels must be int or str, got {type(label).__name__}")
    return int.from_bytes(hasher.digest()[:8], "little")


class RandomSource:
    """Seedable deterministic generator of uniform reals in the open (0, 1).

    The same seed always yields the same sequence of uniforms, and the
    sequence does not depend on how calls are chunked: mixing
    :meth:`next_uniform` with :meth:`uniforms` consumes one underlying
    stream in order. Values are never exactly 0 or 1.

    A RandomSource is single-owner sequential state; give every
    concurrent consumer its own instance via :meth:`derive`.
    """

    __slots__ = ("_seed", "_gen", "_buf", "_pos", "_block")

    def __init__(self, seed: int) -> None:
        seed = int(seed) & _U64
        self._seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))
        self._buf: list[float] = []
        self._pos = 0
        self._block = 64

    @property
    def seed(self) -> int:
        return self._seed

    def __repr__(self) -> str:
        return f"RandomSource(seed={self._seed})"

    def _draw_open(self, count: int) -> np.ndarray:
        """Draw ``count`` uniforms from [0, 1) and scrub exact zeros."""
        out = self._gen.random(count)
        mask = out == 0.0
        while mask.any():
            out[mask] = self._gen.random(int(mask.sum()))
            mask = out == 0.0
        return out

    def next_uniform(self) -> float:
        """Return the next uniform real strictly inside (0, 1)."""
        pos = self._pos
        buf = self._buf
        if pos >= len(buf):
            block = self._block
            if block < 4096:
                self._block = block * 4
            buf = self._draw_open(block).tolist()
            self._buf = buf
            pos = 0
        self._pos = pos + 1
        return buf[pos]

    def uniforms(self, count: int) -> np.ndarray:
        """Return ``count`` uniforms in (0, 1) as a float64 array."""
        if count < 0:
            raise ValueError(f"count must be >= 0, got {count}")
        buf = self._buf
        pos = self._pos
        left = len(buf) - pos
        if left >= count:
            self._pos = pos + count
            return np.array(buf[pos : pos + count], dtype=np.float64)
        head = np.array(buf[pos:], dtype=np.float64)
        self._pos = len(buf)
        tail = self._draw_open(count - left)
        return np.concatenate([head, tail]) if left else tail

    def derive(self, *labels: object) -> "RandomSource":
        """Return an independent child source keyed by ``labels``."""
        return RandomSource(derive_seed(self._seed, *labels))


def ipps_threshold(weights: Iterable[float], k: int) -> float:
    """Solve the threshold equation for a weight multiset and capacity k.

    Returns the unique tau > 0 with sum(min(1, w_i/tau)) = k when k < n,
    and 0.0 when k >= n (everything is kept). Computed in closed form:
    weights are sorted descending, the count h of items kept whole is
    located by scanning candidate splits, and tau is the remaining mass
    divided by (k - h). The result satisfies the defining equation to
    relative tolerance 1e-12.

    Args:
        weights: Positive finite reals (any iterable; consumed once).
        k: Sample capacity, at least 1.

    Raises:
        ValueError: On k < 1 or any nonpositive/non-finite weight.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ws = [_validate_weight(w) for w in weights]
    n = len(ws)
    if k >= n:
        return 0.0
    ws.sort(reverse=True)
    prefix = 0.0
    for h in range(k):
        rest = math.fsum(ws[h:])
        tau = rest / (k - h)
        if ws[h] <= tau:
            return tau
        prefix += ws[h]
    raise ConsistencyError(
        "no consistent heavy count found; this cannot happen for valid input"
    )


def inclusion_probability(weight: float, tau: float) -> float:
    """Probability that an item of the given weight enters the sample.

    Returns 1 when the threshold is 0 (no sampling pressure) or the
    weight reaches the threshold, otherwise weight/tau.

    Raises:
        ValueError: On nonpositive weight or negative/non-finite tau.
    """
    weight = _validate_weight(weight)
    if not math.isfinite(tau) or tau < 0.0:
        raise ValueError(f"tau must be finite and >= 0, got {tau!r}")
    if tau == 0.0 or weight >= tau:
        return 1.0
    return weight / tau


def select_drop(
    entries: Sequence[SampleEntry],
    tau_new: float,
    r: float,
) -> tuple[Hashable, list[SampleEntry]]:
    """Drop exactly one of k+1 entries and lift survivors to the threshold.

    The caller supplies entries in canonical drop order and a threshold
    satisfying sum(min(1, w_i/tau_new)) = k. The unit interval is split
    into consecutive segments of size q_i = 1 - w_i/tau_new for the light
    entries (heavy entries never appear in the partition); the entry whose
    segment contains ``r`` is dropped. Surviving light entries get
    adjusted weight tau_new, so the adjusted total is preserved exactly.

    Args:
        entries: k+1 sample entries, already in drop order.
        tau_new: The threshold for the post-drop sample.
        r: Uniform real in (0, 1).

    Returns:
        (dropped key, surviving entries in input order).

    Raises:
        ConsistencyError: If the light segments do not cover the unit
            interval within 1e-9, meaning the precondition was violated.
        ValueError: On an empty entry list, bad threshold, or r outside (0, 1).
    """
    if not entries:
        raise ValueError("select_drop needs at least one entry")
    tau_new = float(tau_new)
    if not math.isfinite(tau_new) or tau_new <= 0.0:
        raise ValueError(f"tau_new must be positive and finite, got {tau_new!r}")
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie strictly inside (0, 1), got {r!r}")

    gaps = [tau_new - e.adjusted_weight for e in entries]
    mass = math.fsum(g for g in gaps if g > 0.0)
    if abs(mass - tau_new) > 1e-9 * tau_new:
        raise ConsistencyError(
            f"drop segments sum to {mass / tau_new!r} of the unit interval; "
            "entries and tau_new do not satisfy the threshold equation"
        )

    r_scaled = r * tau_new
    acc = 0.0
    drop_at = -1
    last_light = -1
    for i, gap in enumerate(gaps):
        if gap <= 0.0:
            continue
        last_light = i
        acc += gap
        if r_scaled <= acc:
            drop_at = i
            break
    if drop_at < 0:
        # Rounding can leave a sliver of the interval uncovered; the spill
        # belongs to the final segment.
        drop_at = last_light

    dropped_key = entries[drop_at].key
    survivors: list[SampleEntry] = []
    for i, entry in enumerate(entries):
        if i == drop_at:
            continue
        if gaps[i] > 0.0:
            survivors.append(
                SampleEntry(
                    key=entry.key,
                    adjusted_weight=tau_new,
                    original_weight=entry.original_weight,
                )
            )
        else:
            survivors.append(entry)
    return dropped_key, survivors

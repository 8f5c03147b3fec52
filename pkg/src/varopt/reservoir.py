"""Fixed-capacity weighted reservoirs with variance-optimal eviction.

A reservoir ingests a stream of weighted items one at a time. While
fewer than k items have arrived it keeps everything; afterwards each
insert evicts exactly one item, chosen so that subset-sum estimates
from the surviving adjusted weights stay unbiased with the least
possible total variance. The state splits into items pinned at the
current threshold and items still above it.

Three interchangeable implementations are provided:

- ``tree``: balanced search trees for both halves of the state,
  O(log k) per insert plus an O(1) simple path that handles the vast
  majority of inserts on long streams. This is the default.
- ``amortized``: a binary heap for the items above the threshold and a
  flat array for the pinned items, amortized O(log k) per insert. It
  realizes the same per-item inclusion probabilities as ``tree`` but
  not the same joint draws, so byte-level agreement across the two is
  not promised.
- ``naive_oracle``: a deliberately literal restatement of the eviction
  rule over a flat sorted list, O(k log k) per insert. It exists as the
  behavioral reference for tests; the tree implementation must match
  it draw for draw when both consume the same uniforms.

All implementations consume at most one uniform per insert, and none
when the reservoir is still filling.
"""

from __future__ import annotations

import heapq
import math
from abc import ABC, abstractmethod
from typing import Hashable, Iterable, NamedTuple

from ._avl import AvlTree
from .core import (
    ConsistencyError,
    RandomSource,
    Sample,
    SampleEntry,
    WeightedItem,
    check_varopt_sample,
    select_drop,
)

__all__ = ["ReservoirState", "SimpleInsertResult", "reservoir_new", "varopt_sample"]

_INF = float("inf")


class SimpleInsertResult(NamedTuple):
    """Outcome of the simple insertion attempt.

    ``handled`` means the insert is complete. Otherwise the caller must
    finish with a full eviction step, reusing ``carry`` as its uniform
    if one was drawn (drawing a fresh uniform instead would skew the
    eviction probabilities).
    """

    handled: bool
    carry: float | None


class ReservoirState(ABC):
    """Common skeleton for the reservoir implementations.

    Subclasses provide storage and the full eviction step; arrival
    indices, counters, duplicate detection, the simple path, and sample
    materialization live here so that every implementation shares the
    exact same arithmetic on the simple path.
    """

    def __init__(self, capacity_k: int, fast_path: bool) -> None:
        if capacity_k < 1:
            raise ValueError(f"capacity_k must be >= 1, got {capacity_k}")
        self.capacity_k = capacity_k
        self.fast_path = fast_path
        self.items_seen = 0
        self.total_weight_seen = 0.0
        self.simple_steps = 0
        self.full_steps = 0
        self._tau = 0.0
        self._keys: set[Hashable] = set()

    @property
    def threshold(self) -> float:
        """Current adjusted weight of every pinned item (0 while filling)."""
        return self._tau

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key: Hashable) -> bool:
        return key in self._keys

    def insert_weighted(self, key: Hashable, weight: float, rng: RandomSource) -> None:
        """Ingest one item given as a bare (key, weight) pair."""
        self.insert(WeightedItem(key=key, weight=float(weight)), rng)

    def insert(self, item: WeightedItem, rng: RandomSource) -> None:
        """Ingest one item, evicting another if the reservoir is full.

        The item's stream position is stamped from this reservoir's own
        running count; any ``arrival_index`` on the item is ignored.
        """
        handled, carry = self.try_simple_insert(item, rng)
        if handled:
            return
        r = rng.next_uniform() if carry is None else carry
        dropped = self._full_step(item, r)
        self._keys.add(item.key)
        self._keys.discard(dropped)
        self.items_seen += 1
        self.total_weight_seen += item.weight
        self.full_steps += 1

    def try_simple_insert(
        self, item: WeightedItem, rng: RandomSource
    ) -> SimpleInsertResult:
        """Attempt the cheap insertion paths; fall through otherwise.

        Handles two cases completely: the reservoir is still filling
        (no randomness needed), or the fast path is enabled and the new
        item alone is evicted, which only bumps the threshold. Any other
        case returns ``handled=False`` and, when a uniform was already
        spent on the failed fast-path test, passes it back as ``carry``
        for the full step to reuse.
        """
        if item.key in self._keys:
            raise ValueError(f"key already present in reservoir: {item.key!r}")
        if len(self._keys) < self.capacity_k:
            self._append_fill(item)
            self._keys.add(item.key)
            self.items_seen += 1
            self.total_weight_seen += item.weight
            self.simple_steps += 1
            return SimpleInsertResult(True, None)
        if not self.fast_path:
            return SimpleInsertResult(False, None)
        pinned = self._pinned_count()
        if pinned == 0:
            return SimpleInsertResult(False, None)
        w = item.weight
        tau_tent = (self._tau * pinned + w) / pinned
        if w >= tau_tent:
            return SimpleInsertResult(False, None)
        if tau_tent >= self._min_above_weight():
            return SimpleInsertResult(False, None)
        r = rng.next_uniform()
        if r * tau_tent <= tau_tent - w:
            self._tau = tau_tent
            self.items_seen += 1
            self.total_weight_seen += w
            self.simple_steps += 1
            return SimpleInsertResult(True, None)
        return SimpleInsertResult(False, r)

    def sample(self) -> Sample:
        """Materialize the current state as a checked, immutable sample.

        Entries come out in stream-arrival order. The result always
        satisfies the variance-optimal invariants (exact size, exact
        adjusted total, threshold form); violation raises
        ConsistencyError rather than returning a corrupt sample.
        """
        rows = sorted(self._entries(), key=lambda row: row[0])
        result = Sample(
            entries=tuple(entry for _, entry in rows),
            capacity_k=self.capacity_k,
            threshold=self._tau,
            total_weight_seen=self.total_weight_seen,
            items_seen=self.items_seen,
        )
        check_varopt_sample(result)
        return result

    @abstractmethod
    def _append_fill(self, item: WeightedItem) -> None:
        """Store an item while the reservoir is below capacity."""

    @abstractmethod
    def _pinned_count(self) -> int:
        """Number of items currently pinned at the threshold."""

    @abstractmethod
    def _min_above_weight(self) -> float:
        """Smallest weight above the threshold (inf when none are)."""

    @abstractmethod
    def _full_step(self, item: WeightedItem, r: float) -> Hashable:
        """Run one full eviction step; return the evicted key."""

    @abstractmethod
    def _entries(self) -> list[tuple[int, SampleEntry]]:
        """Current contents as (arrival_index, entry) pairs, any order."""


class _TreeReservoir(ReservoirState):
    """Balanced-tree state: O(log k) full steps, O(1) simple steps.

    Items above the threshold live in a tree ordered by (weight,
    arrival); items pinned at the threshold live in a tree ordered by
    arrival alone, which gives rank selection for the eviction draw.
    Pinned items store no adjusted weight: the reservoir threshold is
    their adjusted weight, which is what makes the fast path a pure
    threshold bump.
    """

    implementation = "tree"

    def __init__(self, capacity_k: int, fast_path: bool) -> None:
        super().__init__(capacity_k, fast_path)
        self._above = AvlTree()
        self._pinned = AvlTree()
        self._above_min = _INF

    def _append_fill(self, item: WeightedItem) -> None:
        arrival = self.items_seen
        self._above.insert((item.weight, arrival), item.key, item.weight)
        if item.weight < self._above_min:
            self._above_min = item.weight

    def _pinned_count(self) -> int:
        return len(self._pinned)

    def _min_above_weight(self) -> float:
        return self._above_min

    def _full_step(self, item: WeightedItem, r: float) -> Hashable:
        w = item.weight
        arrival = self.items_seen
        tau = self._tau
        above = self._above
        pinned = self._pinned
        n_pinned = len(pinned)

        # Gather the light side: everything pinned, the new item if it is
        # at or below the threshold, then items peeled off the above-tree
        # in weight order for as long as they fall under the would-be
        # threshold. Inclusive comparisons keep boundary items light.
        new_is_light = w <= tau
        mass = tau * n_pinned + w if new_is_light else tau * n_pinned
        light_count = n_pinned + 1 if new_is_light else n_pinned
        new_pending = not new_is_light
        moved: list[tuple[Hashable, float, int]] = []
        while True:
            head = above.peek_min()
            if new_pending and (head is None or (w, arrival) < head[0]):
                if (light_count - 1) * w > mass:
                    break
                new_pending = False
                new_is_light = True
                mass += w
                light_count += 1
                continue
            if head is None:
                break
            head_w = head[2]
            if (light_count - 1) * head_w > mass:
                break
            hkey, ikey, hw = above.pop_min()
            moved.append((ikey, hw, hkey[1]))
            mass += hw
            light_count += 1
        if light_count < 2:
            raise ConsistencyError(
                "fewer than two light items in a full step; the state is corrupt"
            )
        tau_new = mass / (light_count - 1)

        # Walk the eviction segments in canonical order: the new item
        # first when light, pinned items by arrival, moved items in the
        # order they were peeled off.
        rt = r * tau_new
        acc = 0.0
        drop_new = False
        drop_pinned = -1
        drop_moved = -1
        if new_is_light:
            acc = tau_new - w
            if rt <= acc:
                drop_new = True
        if not drop_new:
            step = tau_new - tau
            if n_pinned and step > 0.0:
                d = int(math.floor((rt - acc) / step))
                if d < 1:
                    d = 1
                while d > 1 and acc + (d - 1) * step >= rt:
                    d -= 1
                while d <= n_pinned and acc + d * step < rt:
                    d += 1
                if d <= n_pinned:
                    drop_pinned = d - 1
                else:
                    acc += n_pinned * step
        if not drop_new and drop_pinned < 0:
            for i, (_, hw, _) in enumerate(moved):
                gap = tau_new - hw
                if gap <= 0.0:
                    continue
                acc += gap
                if rt <= acc:
                    drop_moved = i
                    break
            else:
                # Rounding left a sliver of the interval uncovered; it
                # belongs to the last nonempty segment.
                for i in range(len(moved) - 1, -1, -1):
                    if tau_new - moved[i][1] > 0.0:
                        drop_moved = i
                        break
                else:
                    if n_pinned and tau_new - tau > 0.0:
                        drop_pinned = n_pinned - 1
                    elif new_is_light and tau_new - w > 0.0:
                        drop_new = True
                    else:
                        raise ConsistencyError(
                            "no droppable light item found in a full step"
                        )

        if drop_new:
            dropped = item.key
        elif drop_pinned >= 0:
            _, dropped, _ = pinned.delete_index(drop_pinned)
        else:
            dropped = moved[drop_moved][0]

        for i, (ikey, hw, harr) in enumerate(moved):
            if i != drop_moved:
                pinned.insert(harr, ikey, hw)
        if not drop_new:
            if new_is_light:
                pinned.insert(arrival, item.key, w)
            else:
                above.insert((w, arrival), item.key, w)

        self._tau = tau_new
        head = above.peek_min()
        self._above_min = head[2] if head is not None else _INF
        return dropped

    def _entries(self) -> list[tuple[int, SampleEntry]]:
        tau = self._tau
        rows: list[tuple[int, SampleEntry]] = []
        for arrival, ikey, hw in self._pinned:
            rows.append(
                (arrival, SampleEntry(key=ikey, adjusted_weight=tau, original_weight=hw))
            )
        for (hw2, arrival), ikey, hw in self._above:
            rows.append(
                (arrival, SampleEntry(key=ikey, adjusted_weight=hw, original_weight=hw))
            )
        return rows


class _AmortizedReservoir(ReservoirState):
    """Heap-and-array state with amortized O(log k) inserts.

    Items above the threshold sit in a binary min-heap keyed by weight.
    Pinned items sit in a flat array; eviction there picks a slot
    directly from the uniform and removes it by swapping in the last
    element, so the array order carries no meaning. Per-item inclusion
    probabilities match the tree implementation exactly; the joint
    realization for a shared uniform stream does not.
    """

    implementation = "amortized"

    def __init__(self, capacity_k: int, fast_path: bool) -> None:
        super().__init__(capacity_k, fast_path)
        self._above: list[tuple[float, int, Hashable]] = []
        self._pinned: list[tuple[Hashable, float, int]] = []

    def _append_fill(self, item: WeightedItem) -> None:
        heapq.heappush(self._above, (item.weight, self.items_seen, item.key))

    def _pinned_count(self) -> int:
        return len(self._pinned)

    def _min_above_weight(self) -> float:
        return self._above[0][0] if self._above else _INF

    def _full_step(self, item: WeightedItem, r: float) -> Hashable:
        w = item.weight
        arrival = self.items_seen
        tau = self._tau
        above = self._above
        pinned = self._pinned
        n_pinned = len(pinned)

        moved: list[tuple[Hashable, float, int]] = []
        if w <= tau:
            moved.append((item.key, w, arrival))
            mass = tau * n_pinned + w
        else:
            heapq.heappush(above, (w, arrival, item.key))
            mass = tau * n_pinned
        light_count = n_pinned + len(moved)
        while above:
            head_w = above[0][0]
            if (light_count - 1) * head_w > mass:
                break
            hw, harr, ikey = heapq.heappop(above)
            moved.append((ikey, hw, harr))
            mass += hw
            light_count += 1
        if light_count < 2:
            raise ConsistencyError(
                "fewer than two light items in a full step; the state is corrupt"
            )
        tau_new = mass / (light_count - 1)

        rt = r * tau_new
        acc = 0.0
        drop_moved = -1
        for i, (_, mw, _) in enumerate(moved):
            gap = tau_new - mw
            if gap <= 0.0:
                continue
            acc += gap
            if rt <= acc:
                drop_moved = i
                break

        if drop_moved >= 0:
            dropped = moved[drop_moved][0]
            for i, row in enumerate(moved):
                if i != drop_moved:
                    pinned.append(row)
        else:
            step = tau_new - tau
            if n_pinned and step > 0.0:
                idx = int((rt - acc) / step)
                if idx < 0:
                    idx = 0
                elif idx >= n_pinned:
                    idx = n_pinned - 1
                dropped = pinned[idx][0]
                pinned[idx] = pinned[-1]
                pinned.pop()
            else:
                for i in range(len(moved) - 1, -1, -1):
                    if tau_new - moved[i][1] > 0.0:
                        break
                else:
                    raise ConsistencyError(
                        "no droppable light item found in a full step"
                    )
                dropped = moved[i][0]
                del moved[i]
            pinned.extend(moved)

        self._tau = tau_new
        return dropped

    def _entries(self) -> list[tuple[int, SampleEntry]]:
        tau = self._tau
        rows: list[tuple[int, SampleEntry]] = []
        for ikey, hw, arrival in self._pinned:
            rows.append(
                (arrival, SampleEntry(key=ikey, adjusted_weight=tau, original_weight=hw))
            )
        for hw, arrival, ikey in self._above:
            rows.append(
                (arrival, SampleEntry(key=ikey, adjusted_weight=hw, original_weight=hw))
            )
        return rows


class _NaiveReservoir(ReservoirState):
    """Literal restatement of the eviction rule over a flat list.

    Every full step re-sorts the k+1 candidates by (adjusted weight,
    arrival), rescans all candidate light-set sizes to find the largest
    consistent one, and walks the eviction segments cumulatively via
    the shared one-shot drop primitive. O(k log k) per insert. The fast
    path is off by default so that every eviction exercises the literal
    rule.
    """

    implementation = "naive_oracle"

    def __init__(self, capacity_k: int, fast_path: bool) -> None:
        super().__init__(capacity_k, fast_path)
        self._rows: list[tuple[Hashable, float, float, int]] = []

    def _append_fill(self, item: WeightedItem) -> None:
        self._rows.append((item.key, item.weight, item.weight, self.items_seen))

    def _pinned_count(self) -> int:
        tau = self._tau
        return sum(1 for row in self._rows if row[2] == tau)

    def _min_above_weight(self) -> float:
        tau = self._tau
        return min((row[2] for row in self._rows if row[2] != tau), default=_INF)

    def _full_step(self, item: WeightedItem, r: float) -> Hashable:
        arrival = self.items_seen
        rows = self._rows + [(item.key, item.weight, item.weight, arrival)]
        rows.sort(key=lambda row: (row[2], row[3]))

        # Largest light-set size t whose members can share the mass:
        # scan every t and keep the last one where the t smallest
        # adjusted weights average (over t-1 slots) to at least the t-th.
        best_t = -1
        best_prefix = 0.0
        running = 0.0
        for t in range(1, len(rows) + 1):
            running += rows[t - 1][2]
            if t >= 2 and running >= (t - 1) * rows[t - 1][2]:
                best_t = t
                best_prefix = running
        if best_t < 2:
            raise ConsistencyError("no consistent light-set size found")
        tau_new = best_prefix / (best_t - 1)

        arrivals = {row[0]: row[3] for row in rows}
        originals = {row[0]: row[1] for row in rows}
        lights = rows[:best_t]
        heavies = rows[best_t:]
        ordered = [row for row in lights if row[3] == arrival]
        ordered += [row for row in lights if row[3] != arrival]
        ordered += heavies
        entries = [
            SampleEntry(key=row[0], adjusted_weight=row[2], original_weight=row[1])
            for row in ordered
        ]
        dropped, survivors = select_drop(entries, tau_new, r)
        self._rows = [
            (e.key, originals[e.key], e.adjusted_weight, arrivals[e.key])
            for e in survivors
        ]
        self._tau = tau_new
        return dropped

    def _entries(self) -> list[tuple[int, SampleEntry]]:
        return [
            (arrival, SampleEntry(key=ikey, adjusted_weight=aw, original_weight=ow))
            for ikey, ow, aw, arrival in self._rows
        ]


_IMPLEMENTATIONS: dict[str, type[ReservoirState]] = {
    "tree": _TreeReservoir,
    "amortized": _AmortizedReservoir,
    "naive_oracle": _NaiveReservoir,
    "naive": _NaiveReservoir,
}


def reservoir_new(
    capacity_k: int,
    implementation: str = "tree",
    *,
    fast_path: bool | None = None,
) -> ReservoirState:
    """Create an empty reservoir.

    Args:
        capacity_k: Maximum number of retained items, at least 1.
        implementation: One of "tree", "amortized", or "naive_oracle"
            ("naive" is accepted as an alias).
        fast_path: Whether inserts may be resolved by the O(1) simple
            path. Defaults to True for tree and amortized, False for
            the oracle so that it always runs the literal rule.
    """
    try:
        cls = _IMPLEMENTATIONS[implementation]
    except KeyError:
        valid = ", ".join(sorted(set(_IMPLEMENTATIONS)))
        raise ValueError(
            f"unknown implementation {implementation!r}; expected one of: {valid}"
        ) from None
    if fast_path is None:
        fast_path = cls is not _NaiveReservoir
    return cls(capacity_k, fast_path)


def varopt_sample(
    items: Iterable[WeightedItem],
    k: int,
    rng: RandomSource,
    *,
    implementation: str = "tree",
    fast_path: bool | None = None,
) -> Sample:
    """Run a whole item stream through a fresh reservoir and sample it."""
    reservoir = reservoir_new(k, implementation, fast_path=fast_path)
    for item in items:
        reservoir.insert(item, rng)
    return reservoir.sample()

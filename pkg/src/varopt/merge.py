"""Merging of independent samples and a portable sample wire format.

Samples built over disjoint key sets (stream partitions) combine into
one sample of the union stream: the entries of all inputs, with their
adjusted weights treated as plain weights, are fed through a fresh
reservoir of the target capacity. The recurrence this implements keeps
the merged output exactly as good as a single-pass sample of the whole
stream: unbiased, exact-total, and threshold-form.

The wire format ships a Sample between processes, binary or TSV text,
both round-tripping adjusted weights bit-exactly.
"""

from __future__ import annotations

import math
import struct
from typing import Hashable, Sequence

from .core import RandomSource, Sample, SampleEntry, WeightedItem, check_varopt_sample
from .reservoir import reservoir_new

__all__ = [
    "SampleParseError",
    "merge",
    "serialize_sample",
    "deserialize_sample",
    "serialize_sample_text",
    "deserialize_sample_text",
]


class SampleParseError(ValueError):
    """Raised when serialized sample data cannot be decoded."""


def merge(samples: Sequence[Sample], k: int, rng: RandomSource) -> Sample:
    """Combine independent samples of disjoint streams at capacity k.

    Every input must carry capacity at least k, and the inputs must have
    been produced independently (distinct RandomSource lineages) over
    pairwise disjoint key sets. The union of all entries is fed through
    a fresh capacity-k reservoir in key-sorted order, adjusted weights
    standing in for weights; afterwards each surviving entry gets its
    true original weight back. When the entries fit within k no
    resampling happens and the union is returned unchanged; randomness
    is consumed only when an eviction is needed.

    The output's total_weight_seen and items_seen are the sums over the
    inputs, and the exact-total property holds for every realization.

    Raises:
        ValueError: On an empty input list, k < 1, any input capacity
            below k, a duplicate key across inputs, or keys that cannot
            be ordered against each other.
    """
    if not samples:
        raise ValueError("merge needs at least one sample")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    for smp in samples:
        if smp.capacity_k < k:
            raise ValueError(
                f"input sample capacity {smp.capacity_k} is below the merge capacity {k}"
            )
        check_varopt_sample(smp)

    seen: set[Hashable] = set()
    union: list[SampleEntry] = []
    for smp in samples:
        for entry in smp.entries:
            if entry.key in seen:
                raise ValueError(f"duplicate key across samples: {entry.key!r}")
            seen.add(entry.key)
            union.append(entry)

    items_seen = sum(smp.items_seen for smp in samples)
    total = math.fsum(smp.total_weight_seen for smp in samples)

    if len(union) <= k:
        merged = Sample(
            entries=tuple(union),
            capacity_k=k,
            threshold=max((s.threshold for s in samples if s.entries), default=0.0),
            total_weight_seen=total,
            items_seen=items_seen,
        )
        check_varopt_sample(merged)
        return merged

    try:
        union.sort(key=lambda entry: entry.key)
    except TypeError as exc:
        raise ValueError(f"sample keys are not mutually orderable: {exc}") from None

    reservoir = reservoir_new(k, "tree")
    for entry in union:
        reservoir.insert(
            WeightedItem(key=entry.key, weight=entry.adjusted_weight), rng
        )
    resampled = reservoir.sample()

    originals = {entry.key: entry.original_weight for entry in union}
    restored = tuple(
        SampleEntry(
            key=entry.key,
            adjusted_weight=entry.adjusted_weight,
            original_weight=originals[entry.key],
        )
        for entry in resampled.entries
    )
    merged = Sample(
        entries=restored,
        capacity_k=k,
        threshold=resampled.threshold,
        total_weight_seen=total,
        items_seen=items_seen,
    )
    check_varopt_sample(merged)
    return merged


_MAGIC = b"VOPT"
_VERSION = 1
_HEADER = struct.Struct("<4sHIQddI")
_KEY_LEN = struct.Struct("<H")
_WEIGHTS = struct.Struct("<dd")


def serialize_sample(sample: Sample) -> bytes:
    """Encode a sample in the portable binary format.

    Little-endian: magic "VOPT", version u16, capacity_k u32, items_seen
    u64, total_weight_seen f64, threshold f64, entry_count u32, then per
    entry (key_len u16, UTF-8 key, original_weight f64, adjusted_weight
    f64). Keys must be strings of at most 65535 encoded bytes.
    """
    parts = [
        _HEADER.pack(
            _MAGIC,
            _VERSION,
            sample.capacity_k,
            sample.items_seen,
            sample.total_weight_seen,
            sample.threshold,
            len(sample.entries),
        )
    ]
    for entry in sample.entries:
        if not isinstance(entry.key, str):
            raise TypeError(
                f"only string keys can be serialized, got {type(entry.key).__name__}"
            )
        raw = entry.key.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"key too long to serialize: {len(raw)} bytes")
        parts.append(_KEY_LEN.pack(len(raw)))
        parts.append(raw)
        parts.append(_WEIGHTS.pack(entry.original_weight, entry.adjusted_weight))
    return b"".join(parts)


def deserialize_sample(data: bytes) -> Sample:
    """Decode the binary sample format; inverse of serialize_sample.

    Raises:
        SampleParseError: On bad magic, unsupported version, truncation,
            trailing bytes, undecodable keys, or invalid field values,
            with the byte offset of the problem.
    """
    if len(data) < _HEADER.size:
        raise SampleParseError(
            f"truncated header: need {_HEADER.size} bytes, have {len(data)}"
        )
    magic, version, capacity_k, items_seen, total, threshold, count = _HEADER.unpack_from(
        data, 0
    )
    if magic != _MAGIC:
        raise SampleParseError(f"bad magic {magic!r} at offset 0")
    if version != _VERSION:
        raise SampleParseError(f"unsupported version {version} at offset 4")
    offset = _HEADER.size
    entries: list[SampleEntry] = []
    for index in range(count):
        if offset + _KEY_LEN.size > len(data):
            raise SampleParseError(f"truncated at entry {index}, offset {offset}")
        (key_len,) = _KEY_LEN.unpack_from(data, offset)
        offset += _KEY_LEN.size
        end = offset + key_len + _WEIGHTS.size
        if end > len(data):
            raise SampleParseError(f"truncated at entry {index}, offset {offset}")
        try:
            key = data[offset : offset + key_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SampleParseError(
                f"undecodable key at entry {index}, offset {offset}: {exc}"
            ) from None
        offset += key_len
        original, adjusted = _WEIGHTS.unpack_from(data, offset)
        offset += _WEIGHTS.size
        if not (math.isfinite(original) and math.isfinite(adjusted)):
            raise SampleParseError(
                f"non-finite weight at entry {index}, offset {offset - _WEIGHTS.size}"
            )
        try:
            entries.append(
                SampleEntry(key=key, adjusted_weight=adjusted, original_weight=original)
            )
        except ValueError as exc:
            raise SampleParseError(f"invalid entry {index}: {exc}") from None
    if offset != len(data):
        raise SampleParseError(f"trailing data at offset {offset}")
    try:
        return Sample(
            entries=tuple(entries),
            capacity_k=capacity_k,
            threshold=threshold,
            total_weight_seen=total,
            items_seen=items_seen,
        )
    except ValueError as exc:
        raise SampleParseError(f"invalid sample fields: {exc}") from None


_TEXT_MAGIC = "# varopt-sample 1"
_TEXT_FIELDS = ("capacity_k", "items_seen", "total_weight_seen", "threshold")


def serialize_sample_text(sample: Sample) -> str:
    """Encode a sample as TSV text with '#'-prefixed header lines.

    One entry per line: key, original_weight, adjusted_weight. Floats
    use repr so the round trip is bit-exact. Keys must be strings free
    of tabs and newlines and must not start with '#'.
    """
    lines = [
        _TEXT_MAGIC,
        f"# capacity_k {sample.capacity_k}",
        f"# items_seen {sample.items_seen}",
        f"# total_weight_seen {sample.total_weight_seen!r}",
        f"# threshold {sample.threshold!r}",
    ]
    for entry in sample.entries:
        key = entry.key
        if not isinstance(key, str):
            raise TypeError(
                f"only string keys can be serialized, got {type(key).__name__}"
            )
        if "\t" in key or "\n" in key or "\r" in key or key.startswith("#") or not key:
            raise ValueError(f"key not representable in text form: {key!r}")
        lines.append(f"{key}\t{entry.original_weight!r}\t{entry.adjusted_weight!r}")
    return "\n".join(lines) + "\n"


def deserialize_sample_text(text: str) -> Sample:
    """Decode the text sample format; inverse of serialize_sample_text."""
    scalars: dict[str, str] = {}
    magic_seen = False
    entries: list[SampleEntry] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.strip() == _TEXT_MAGIC.strip():
                magic_seen = True
                continue
            body = line[1:].strip()
            name, _, value = body.partition(" ")
            if name in _TEXT_FIELDS:
                scalars[name] = value.strip()
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise SampleParseError(
                f"line {line_no}: expected 3 tab-separated fields, got {len(fields)}"
            )
        key, original_text, adjusted_text = fields
        try:
            original = float(original_text)
            adjusted = float(adjusted_text)
        except ValueError:
            raise SampleParseError(f"line {line_no}: unparsable weight") from None
        if not (math.isfinite(original) and math.isfinite(adjusted)):
            raise SampleParseError(f"line {line_no}: non-finite weight")
        try:
            entries.append(
                SampleEntry(key=key, adjusted_weight=adjusted, original_weight=original)
            )
        except ValueError as exc:
            raise SampleParseError(f"line {line_no}: {exc}") from None
    if not magic_seen:
        raise SampleParseError(f"missing format line {_TEXT_MAGIC!r}")
    missing = [name for name in _TEXT_FIELDS if name not in scalars]
    if missing:
        raise SampleParseError(f"missing header field(s): {', '.join(missing)}")
    try:
        return Sample(
            entries=tuple(entries),
            capacity_k=int(scalars["capacity_k"]),
            threshold=float(scalars["threshold"]),
            total_weight_seen=float(scalars["total_weight_seen"]),
            items_seen=int(scalars["items_seen"]),
        )
    except ValueError as exc:
        raise SampleParseError(f"invalid sample fields: {exc}") from None

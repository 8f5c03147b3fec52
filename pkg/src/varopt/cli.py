"""Command-line front end for sampling, merging, estimation, and studies.

Subcommands:

- ``sample``: stream key/weight lines into one reservoir sample.
- ``merge``: combine sample files produced over disjoint streams.
- ``estimate``: subset-sum estimates (optionally with confidence
  bounds) from a stored sample.
- ``experiment``: Monte Carlo comparison of sampling schemes on a
  generated or supplied instance, written as CSV.
- ``bench``: insert-throughput measurement for the reservoir
  implementations.

Every command that draws randomness takes an integer --seed and derives
an independent stream per purpose, so outputs are byte-identical across
runs with the same inputs, flags, and seed (bench timing columns aside).
Input streams are tab-separated ``key<TAB>weight`` lines; blank lines
are skipped and lines whose first non-space character is ``#`` are
comments. Files are written atomically (temp file plus rename).
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import baselines
from .core import RandomSource, Sample, WeightedItem, derive_seed
from .merge import (
    SampleParseError,
    deserialize_sample,
    deserialize_sample_text,
    merge,
    serialize_sample,
    serialize_sample_text,
)
from .reservoir import reservoir_new, varopt_sample
from .stats import (
    _combine_sums,
    _empirical_sums,
    _finish_report,
    _SumState,
    confidence_interval,
    subset_estimate,
    w_p,
)

__all__ = ["main"]


class CliError(Exception):
    """User-facing command failure; the message goes to stderr."""


def _varopt_scheme(items: Sequence[WeightedItem], k: int, rng: RandomSource) -> Sample:
    return varopt_sample(items, k, rng)


_SCHEMES: dict[str, Callable[[Sequence[WeightedItem], int, RandomSource], Sample]] = {
    "varopt": _varopt_scheme,
    "uniform": baselines.uniform_sample,
    "ppswr": baselines.ppswr_sample,
    "poisson": baselines.poisson_ipps_sample,
    "priority": baselines.priority_sample,
}

_CSV_HEADER = ("scheme", "k", "trials", "partition", "sse_mean", "sigma_v", "v_sigma", "w_half")


def _read_weighted_lines(path: str | None) -> Iterator[tuple[str, float, str]]:
    """Yield (key, weight, location) from a TSV stream, '-' meaning stdin."""
    if path is None or path == "-":
        handle: Iterable[str] = sys.stdin
        name = "<stdin>"
        close = False
    else:
        try:
            handle = open(path, "r", encoding="utf-8")
        except OSError as exc:
            raise CliError(f"{path}: {exc.strerror or exc}") from None
        name = path
        close = True
    try:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CliError(
                    f"{name}:{line_no}: expected key<TAB>weight, got {len(parts)} fields"
                )
            key, weight_text = parts
            if not key:
                raise CliError(f"{name}:{line_no}: empty key")
            try:
                weight = float(weight_text)
            except ValueError:
                raise CliError(
                    f"{name}:{line_no}: unparsable weight {weight_text!r}"
                ) from None
            yield key, weight, f"{name}:{line_no}"
    finally:
        if close:
            handle.close()  # type: ignore[union-attr]


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, temp_path = tempfile.mkstemp(dir=directory, prefix=os.path.basename(path) + ".")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(temp_path, path)
    except BaseException:
        try:
            os.unlink(temp_path)
        except OSError:
            pass
        raise


def _write_output(data: bytes, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        _atomic_write(out, data)


def _write_sample(sample: Sample, out: str | None, form: str) -> None:
    if form == "text":
        _write_output(serialize_sample_text(sample).encode("utf-8"), out)
    else:
        _write_output(serialize_sample(sample), out)


def _read_sample(path: str) -> Sample:
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}") from None
    try:
        if data[:4] == b"VOPT":
            return deserialize_sample(data)
        return deserialize_sample_text(data.decode("utf-8"))
    except (SampleParseError, UnicodeDecodeError) as exc:
        raise CliError(f"{path}: {exc}") from None


def _cmd_sample(args: argparse.Namespace) -> int:
    rng = RandomSource(derive_seed(args.seed, "sample"))
    reservoir = reservoir_new(args.k, args.impl)
    for key, weight, location in _read_weighted_lines(args.input):
        try:
            reservoir.insert_weighted(key, weight, rng)
        except ValueError as exc:
            raise CliError(f"{location}: {exc}") from None
    _write_sample(reservoir.sample(), args.out, args.format)
    return 0


def _cmd_merge(args: argparse.Namespace) -> int:
    loaded = [(path, _read_sample(path)) for path in args.samples]
    k = args.k if args.k is not None else min(s.capacity_k for _, s in loaded)
    for path, smp in loaded:
        if smp.capacity_k < k:
            raise CliError(
                f"{path}: sample capacity {smp.capacity_k} is below merge capacity {k}"
            )
    owners: dict[str, str] = {}
    for path, smp in loaded:
        for entry in smp.entries:
            if entry.key in owners:
                raise CliError(
                    f"duplicate key {entry.key!r} in {path} (also in {owners[entry.key]})"
                )
            owners[entry.key] = path
    rng = RandomSource(derive_seed(args.seed, "merge"))
    try:
        merged = merge([smp for _, smp in loaded], k, rng)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _write_sample(merged, args.out, args.format)
    return 0


def _load_key_set(path: str) -> set[str]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}") from None
    keys = set()
    for line in lines:
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            keys.add(stripped)
    return keys


def _cmd_estimate(args: argparse.Namespace) -> int:
    sample = _read_sample(args.sample)
    selector: Callable[[object], bool] | set[str]
    if args.keys is not None:
        selector = _load_key_set(args.keys)
    elif args.prefix is not None:
        prefix = args.prefix
        selector = lambda key: str(key).startswith(prefix)  # noqa: E731
    else:
        selector = lambda key: True  # noqa: E731
    estimate = subset_estimate(sample, selector)
    if args.confidence is not None:
        if not 0.0 < args.confidence < 1.0:
            raise CliError(f"--confidence must be in (0, 1), got {args.confidence}")
        low, high = confidence_interval(sample, selector, args.confidence)
        line = f"{estimate!r}\t{low!r}\t{high!r}\n"
    else:
        line = f"{estimate!r}\n"
    _write_output(line.encode("utf-8"), args.out)
    return 0


def _instance_items(args: argparse.Namespace) -> list[WeightedItem]:
    kind = args.instance
    if kind == "file":
        if args.input is None:
            raise CliError("--instance file requires --input")
        items = []
        seen = set()
        for key, weight, location in _read_weighted_lines(args.input):
            if key in seen:
                raise CliError(f"{location}: duplicate key {key!r}")
            seen.add(key)
            try:
                items.append(WeightedItem(key=key, weight=weight))
            except ValueError as exc:
                raise CliError(f"{location}: {exc}") from None
        if not items:
            raise CliError(f"{args.input}: no items")
        return items
    if kind == "bad":
        try:
            raw = baselines.bad_instance(args.k, args.ell)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        return [WeightedItem(key=str(item.key), weight=item.weight) for item in raw]
    if args.n < 1:
        raise CliError(f"--n must be >= 1, got {args.n}")
    rng = RandomSource(derive_seed(args.seed, "instance", kind))
    draws = rng.uniforms(args.n)
    if kind == "pareto":
        if args.alpha <= 0:
            raise CliError(f"--alpha must be positive, got {args.alpha}")
        weights = draws ** (-1.0 / args.alpha)
    else:
        weights = draws
    return [WeightedItem(key=str(i), weight=float(w)) for i, w in enumerate(weights)]


def _experiment_chunk(
    scheme: str,
    keys: tuple[str, ...],
    weights: tuple[float, ...],
    k: int,
    trials: int,
    seed: int,
    first_trial: int,
    partition_ix: dict[str, list[np.ndarray]],
) -> _SumState:
    items = [WeightedItem(key=key, weight=w) for key, w in zip(keys, weights)]
    return _empirical_sums(
        _SCHEMES[scheme],
        items,
        k,
        trials,
        seed,
        first_trial=first_trial,
        partition_ix=partition_ix,
    )


def _chunk_bounds(trials: int, jobs: int) -> list[tuple[int, int]]:
    jobs = max(1, min(jobs, trials))
    base, extra = divmod(trials, jobs)
    bounds = []
    start = 0
    for i in range(jobs):
        size = base + (1 if i < extra else 0)
        bounds.append((start, size))
        start += size
    return bounds


def _cmd_experiment(args: argparse.Namespace) -> int:
    schemes = [name.strip() for name in args.schemes.split(",") if name.strip()]
    if not schemes:
        raise CliError("--schemes must name at least one scheme")
    unknown = [name for name in schemes if name not in _SCHEMES]
    if unknown:
        valid = ", ".join(sorted(_SCHEMES))
        raise CliError(f"unknown scheme {unknown[0]!r}; valid schemes: {valid}")
    if args.trials < 1:
        raise CliError(f"--trials must be >= 1, got {args.trials}")
    try:
        granularities = [int(part) for part in args.partition.split(",") if part.strip()]
    except ValueError:
        raise CliError(f"--partition must be comma-separated integers, got {args.partition!r}") from None
    if not granularities or any(g < 1 for g in granularities):
        raise CliError(f"--partition entries must be >= 1, got {args.partition!r}")

    items = _instance_items(args)
    keys = tuple(item.key for item in items)
    weights = tuple(item.weight for item in items)
    truth = np.array(weights, dtype=np.float64)
    partition_ix = {
        str(g): [block for block in np.array_split(np.arange(len(items), dtype=np.intp), g)]
        for g in granularities
    }

    rows = []
    for scheme in schemes:
        seed_scheme = derive_seed(args.seed, "experiment", scheme)
        bounds = _chunk_bounds(args.trials, args.jobs)
        if len(bounds) == 1:
            states = [
                _experiment_chunk(
                    scheme, keys, weights, args.k, args.trials, seed_scheme, 0, partition_ix
                )
            ]
        else:
            with ProcessPoolExecutor(max_workers=len(bounds)) as pool:
                futures = [
                    pool.submit(
                        _experiment_chunk,
                        scheme,
                        keys,
                        weights,
                        args.k,
                        size,
                        seed_scheme,
                        start,
                        partition_ix,
                    )
                    for start, size in bounds
                ]
                states = [future.result() for future in futures]
        result = _finish_report(_combine_sums(states), truth, args.trials)
        report = result.report
        w_half = w_p(report.sigma_v, report.v_sigma, 0.5)
        for g in granularities:
            rows.append(
                (
                    scheme,
                    args.k,
                    args.trials,
                    g,
                    result.partition_sse[str(g)],
                    report.sigma_v,
                    report.v_sigma,
                    w_half,
                )
            )

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(_CSV_HEADER)
    for row in rows:
        writer.writerow([repr(value) if isinstance(value, float) else value for value in row])
    _write_output(buffer.getvalue().encode("utf-8"), args.out)
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    try:
        ks = [int(part) for part in args.k.split(",") if part.strip()]
        impls = [part.strip() for part in args.impl.split(",") if part.strip()]
    except ValueError:
        raise CliError(f"--k must be comma-separated integers, got {args.k!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise CliError(f"--k entries must be >= 1, got {args.k!r}")
    if args.n < 1:
        raise CliError(f"--n must be >= 1, got {args.n}")
    rng = RandomSource(derive_seed(args.seed, "bench", "weights"))
    draws = rng.uniforms(args.n)
    if args.distribution == "pareto":
        weights = draws ** (-1.0 / args.alpha)
    else:
        weights = draws
    weight_list = weights.tolist()

    lines = ["implementation\tk\tn\tseconds\titems_per_second\tsimple_fraction\tfull_steps"]
    for impl in impls:
        for k in ks:
            insert_rng = RandomSource(derive_seed(args.seed, "bench", impl, k))
            try:
                reservoir = reservoir_new(k, impl)
            except ValueError as exc:
                raise CliError(str(exc)) from None
            start = time.perf_counter()
            insert = reservoir.insert_weighted
            for i, w in enumerate(weight_list):
                insert(i, w, insert_rng)
            elapsed = time.perf_counter() - start
            fraction = reservoir.simple_steps / reservoir.items_seen
            lines.append(
                f"{impl}\t{k}\t{args.n}\t{elapsed:.6f}"
                f"\t{args.n / elapsed:.1f}\t{fraction:.6f}\t{reservoir.full_steps}"
            )
    _write_output(("\n".join(lines) + "\n").encode("utf-8"), args.out)
    return 0


def _add_common(parser: argparse.ArgumentParser, *, out: bool = True) -> None:
    parser.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    if out:
        parser.add_argument("--out", default=None, help="output path (default stdout)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varopt",
        description="Variance-optimal weighted reservoir sampling toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sample = sub.add_parser("sample", help="sample a key<TAB>weight stream")
    p_sample.add_argument("input", nargs="?", default=None, help="input file (default stdin)")
    p_sample.add_argument("--k", type=int, required=True, help="sample capacity")
    p_sample.add_argument(
        "--impl",
        choices=("tree", "amortized", "naive"),
        default="tree",
        help="reservoir implementation (default tree)",
    )
    p_sample.add_argument(
        "--format", choices=("binary", "text"), default="binary", help="output form"
    )
    _add_common(p_sample)
    p_sample.set_defaults(func=_cmd_sample)

    p_merge = sub.add_parser("merge", help="merge samples of disjoint streams")
    p_merge.add_argument("samples", nargs="+", help="sample files to merge")
    p_merge.add_argument(
        "--k", type=int, default=None, help="merged capacity (default: smallest input capacity)"
    )
    p_merge.add_argument(
        "--format", choices=("binary", "text"), default="binary", help="output form"
    )
    _add_common(p_merge)
    p_merge.set_defaults(func=_cmd_merge)

    p_est = sub.add_parser("estimate", help="subset-sum estimate from a sample file")
    p_est.add_argument("sample", help="sample file")
    p_est.add_argument("--keys", default=None, help="file of selected keys, one per line")
    p_est.add_argument("--prefix", default=None, help="select keys with this prefix")
    p_est.add_argument(
        "--confidence",
        type=float,
        default=None,
        help="per-side error rate delta; adds lower and upper bounds",
    )
    _add_common(p_est)
    p_est.set_defaults(func=_cmd_estimate)

    p_exp = sub.add_parser("experiment", help="compare schemes by Monte Carlo")
    p_exp.add_argument("--k", type=int, default=10, help="sample capacity (default 10)")
    p_exp.add_argument("--trials", type=int, default=1000, help="trial count (default 1000)")
    p_exp.add_argument(
        "--schemes",
        default="varopt",
        help="comma-separated scheme names (varopt, uniform, ppswr, poisson, priority)",
    )
    p_exp.add_argument(
        "--partition",
        default="1",
        help="comma-separated block counts for per-partition error (default 1)",
    )
    p_exp.add_argument(
        "--instance",
        choices=("pareto", "uniform", "bad", "file"),
        default="pareto",
        help="instance family (default pareto)",
    )
    p_exp.add_argument("--n", type=int, default=100, help="instance size (default 100)")
    p_exp.add_argument("--alpha", type=float, default=1.5, help="pareto shape (default 1.5)")
    p_exp.add_argument("--ell", type=int, default=100, help="unit-tail length for --instance bad")
    p_exp.add_argument("--input", default=None, help="key<TAB>weight file for --instance file")
    p_exp.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    _add_common(p_exp)
    p_exp.set_defaults(func=_cmd_experiment)

    p_bench = sub.add_parser("bench", help="measure reservoir insert throughput")
    p_bench.add_argument("--n", type=int, default=1_000_000, help="stream length (default 1e6)")
    p_bench.add_argument("--k", default="1000", help="comma-separated capacities (default 1000)")
    p_bench.add_argument(
        "--impl", default="tree", help="comma-separated implementations (default tree)"
    )
    p_bench.add_argument(
        "--distribution",
        choices=("uniform", "pareto"),
        default="uniform",
        help="weight distribution (default uniform)",
    )
    p_bench.add_argument("--alpha", type=float, default=1.5, help="pareto shape (default 1.5)")
    _add_common(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns a process exit code."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SampleParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Benchmark workloads: word counting under Zipf skew and cascade joins.

Everything here is a thin composition of the framework: generators produce
payload streams, workload builders assemble workflows, and ``run_wordcount``
/ ``run_join`` deploy, feed, quiesce and fold the metrics into one CSV row.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .core import Workflow, WorkflowBuilder, operation
from .join import BicliqueConfig, MatrixConfig, query_join_workflow
from .operators import sink as sink_spec
from .operators import source as source_spec
from .runtime import (
    ClusterConfig,
    ZeroElapsed,
    ZeroRecords,
    compute_throughput,
    deploy_application,
    imbalance,
)
from .strategies import strategy_by_name

DEFAULT_VOCABULARY = 10_000
DEFAULT_NODES = 4
DEFAULT_THREADS = 4


def stable_seed(*parts) -> int:
    """A process-independent 64-bit seed derived from the given parts."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


# --- zipf word stream ------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ZipfConfig:
    """Zipf-distributed word stream: p(rank r) = r^-z / H(n, z)."""

    vocabulary: int = DEFAULT_VOCABULARY
    exponent: float = 1.4
    record_count: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.vocabulary < 1:
            raise ValueError("vocabulary must be >= 1")
        if self.exponent <= 0:
            raise ValueError("exponent must be > 0")
        if self.record_count < 0:
            raise ValueError("record_count must be >= 0")


def zipf_pmf(vocabulary: int, exponent: float) -> np.ndarray:
    """Probability of each rank 1..vocabulary under the truncated Zipf law."""
    ranks = np.arange(1, vocabulary + 1, dtype=np.float64)
    weights = ranks ** -exponent
    return weights / weights.sum()


def zipf_word(rank: int) -> str:
    return f"w{rank}"


def zipf_generate(config: ZipfConfig) -> list:
    """``record_count`` words sampled by rank probability, seed-deterministic."""
    pmf = zipf_pmf(config.vocabulary, config.exponent)
    rng = np.random.default_rng(stable_seed(config.seed, "zipf"))
    cdf = np.cumsum(pmf)
    draws = rng.random(config.record_count)
    ranks = np.searchsorted(cdf, draws, side="right") + 1
    return [f"w{r}" for r in ranks]


def uniform_words(vocabulary: int, record_count: int, seed: int) -> list:
    """Uniformly distributed words over the same vocabulary naming."""
    rng = np.random.default_rng(stable_seed(seed, "uniform"))
    ranks = rng.integers(1, vocabulary + 1, size=record_count)
    return [f"w{r}" for r in ranks]


# --- word count workload ----------------------------------------------------

_COUNT_OP = None


def word_count_operation():
    """The counting operation: keyed integer count, merge by addition.

    A single shared instance keeps workflows structurally comparable when
    only the strategy changes. Simulated work is charged on ``react``.
    """
    global _COUNT_OP
    if _COUNT_OP is None:

        def key(cb, word):
            return word

        def react(cb, word):
            count = cb.state + 1
            cb.state = count
            cb.emit("out", (word, count))

        def merge(cb, a, b):
            return a + b

        _COUNT_OP = operation(
            "count",
            inputs=["in"],
            outputs=["out"],
            callbacks={"key": key, "react": react, "merge": merge},
            initial_state=0,
            work_callbacks=["react"],
        )
    return _COUNT_OP


def wordcount_workflow(
    strategy_name: str,
    worker_count: int,
    *,
    merge: bool = False,
    sink_consumer=None,
) -> Workflow:
    """source -> count -> sink, with the counting strategy chosen by name.

    Swapping ``strategy_name`` is the only difference between the returned
    workflows; nodes, links and operations stay structurally identical.
    """
    strategy = strategy_by_name(strategy_name, worker_count, merge_enabled=merge)
    b = WorkflowBuilder()
    b.add(source_spec(), name="source")
    b.add(word_count_operation(), strategy=strategy, name="count")
    b.add(sink_spec(sink_consumer), name="sink")
    b.chain("source", "count", "sink")
    return b.build()


# --- synthetic join tables --------------------------------------------------

# Key domains are offset so no two tables share key values.
_NATION_BASE = 100
_SUPP_BASE = 10_000
_ORDER_BASE = 1_000_000

REGION_ROWS = 5
NATION_ROWS = 25


@dataclass(frozen=True, slots=True)
class SyntheticTables:
    """TPC-H-shaped tables at a desk scale: row dicts with valid foreign keys."""

    region: list
    nation: list
    supplier: list
    lineitem: list

    def stream(self, name: str) -> list:
        return getattr(self, name)

    def total_rows(self) -> int:
        return len(self.region) + len(self.nation) + len(self.supplier) + len(self.lineitem)


def synthetic_tables(scale: float, seed: int = 0) -> SyntheticTables:
    """Generate tables: 5 regions, 25 nations, 100*scale suppliers,
    60000*scale lineitems, with uniformly random valid foreign keys."""
    if scale <= 0:
        raise ValueError("scale must be > 0")
    rng = np.random.default_rng(stable_seed(seed, "tables"))
    region = [{"regionkey": k} for k in range(REGION_ROWS)]
    nation = [
        {"nationkey": _NATION_BASE + i, "regionkey": int(rng.integers(REGION_ROWS))}
        for i in range(NATION_ROWS)
    ]
    n_suppliers = max(1, round(100 * scale))
    supplier = [
        {
            "suppkey": _SUPP_BASE + i,
            "nationkey": _NATION_BASE + int(rng.integers(NATION_ROWS)),
        }
        for i in range(n_suppliers)
    ]
    n_lineitems = max(1, round(60_000 * scale))
    lineitem = [
        {
            "orderkey": _ORDER_BASE + i,
            "suppkey": _SUPP_BASE + int(rng.integers(n_suppliers)),
        }
        for i in range(n_lineitems)
    ]
    return SyntheticTables(region, nation, supplier, lineitem)


# --- benchmark runs ---------------------------------------------------------


@dataclass(frozen=True)
class BenchResult:
    """One CSV row per run."""

    benchmark: str
    strategy: str
    parameter: str
    workers: int
    records: int
    throughput_rps: float
    imbalance: float
    remote_msgs: int
    stored_tuples: int
    elapsed_ms: float
    seed: int

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, name) for name in self.field_names()]


def _stored_upstream_of_sinks(workflow: Workflow, metrics) -> int:
    upstream = {
        link.src for link in workflow.links if link.dst in set(workflow.sink_ids())
    }
    return sum(metrics.stored_tuples(nid) for nid in upstream)


def run_wordcount(
    strategy: str,
    z: float,
    workers: int,
    records: int,
    *,
    merge: bool = False,
    work_us: int = 100,
    seed: int = 0,
    nodes: int = DEFAULT_NODES,
    threads: int = DEFAULT_THREADS,
    vocabulary: int = DEFAULT_VOCABULARY,
    deterministic: bool = False,
) -> BenchResult:
    if records < 1:
        raise ZeroRecords("wordcount needs at least one record")
    words = zipf_generate(
        ZipfConfig(vocabulary=vocabulary, exponent=z, record_count=records, seed=seed)
    )
    config = ClusterConfig(
        node_count=nodes,
        executor_threads_per_node=threads,
        seed=seed,
        simulated_work=work_us / 1e6,
        deterministic=deterministic,
    )
    workflow = wordcount_workflow(strategy, workers, merge=merge)
    with deploy_application(workflow, config) as app:
        start = time.perf_counter()
        app.feed("source", words)
        metrics = app.await_quiescence()
        wall_ms = (time.perf_counter() - start) * 1e3
    try:
        throughput = compute_throughput(metrics)
        elapsed_ms = (metrics.last_record_time - metrics.first_record_time) * 1e3
    except (ZeroRecords, ZeroElapsed):
        # A degenerate sink stream (zero or one record) has no elapsed window.
        throughput = float("nan")
        elapsed_ms = wall_ms
    return BenchResult(
        benchmark="wordcount",
        strategy=strategy,
        parameter=str(z),
        workers=workers,
        records=records,
        throughput_rps=throughput,
        imbalance=imbalance(metrics, "count"),
        remote_msgs=metrics.remote_sends(),
        stored_tuples=_stored_upstream_of_sinks(workflow, metrics),
        elapsed_ms=elapsed_ms,
        seed=seed,
    )


def run_join(
    query: str,
    strategy: str,
    *,
    matrix: Optional[MatrixConfig] = None,
    subgroups: Optional[int] = None,
    scale: float = 0.01,
    rates: Optional[dict] = None,
    seed: int = 0,
    nodes: int = DEFAULT_NODES,
    threads: int = DEFAULT_THREADS,
    deterministic: bool = True,
) -> BenchResult:
    """Run one join benchmark. Streams feed concurrently, each at its own
    rate (unthrottled when unset). The deterministic executor is the default
    so that routing-derived columns reproduce exactly."""
    biclique = None
    if subgroups is not None:
        biclique = BicliqueConfig(subgroups=subgroups)
    elif strategy == "jbcr":
        biclique = BicliqueConfig(subgroups=5)
    tables = synthetic_tables(scale, seed)
    workflow = query_join_workflow(query, strategy, matrix=matrix, biclique=biclique)
    config = ClusterConfig(
        node_count=nodes,
        executor_threads_per_node=threads,
        seed=seed,
        deterministic=deterministic,
    )
    rates = rates or {}
    source_ids = [nid for nid in workflow.source_ids()]
    total = sum(len(tables.stream(nid)) for nid in source_ids)
    last_join = [nid for nid in workflow.nodes if nid.startswith("join")][-1]
    with deploy_application(workflow, config) as app:
        start = time.perf_counter()
        feeds = [
            app.feed(nid, tables.stream(nid), rate=rates.get(nid), block=False)
            for nid in source_ids
        ]
        for feed in feeds:
            feed.join()
        metrics = app.await_quiescence()
        wall_ms = (time.perf_counter() - start) * 1e3
    try:
        throughput = compute_throughput(metrics)
        elapsed_ms = (metrics.last_record_time - metrics.first_record_time) * 1e3
    except (ZeroRecords, ZeroElapsed):
        throughput = float("nan")
        elapsed_ms = wall_ms
    return BenchResult(
        benchmark=f"join-{query}",
        strategy=strategy,
        parameter=query,
        workers=len(metrics.worker_group(last_join)),
        records=total,
        throughput_rps=throughput,
        imbalance=imbalance(metrics, last_join),
        remote_msgs=metrics.remote_sends(),
        stored_tuples=metrics.stored_tuples(last_join),
        elapsed_ms=elapsed_ms,
        seed=seed,
    )


def write_csv(results, out) -> None:
    """RFC-4180 CSV with a header row; ``out`` is an open text stream."""
    writer = csv.writer(out)
    writer.writerow(BenchResult.field_names())
    for result in results:
        writer.writerow(result.row())

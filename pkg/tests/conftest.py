import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from collections import Counter

import pytest

from streamloom import ClusterConfig, DataRecord, deploy_application
from streamloom import operators as ops
from streamloom.core import WorkflowBuilder


def run_workflow(workflow, config, feeds, timeout=60.0):
    """Deploy, feed each (source id, payloads) pair, quiesce, close.

    Returns (metrics, app); the app is already closed but its counters,
    trace and worker registry stay readable.
    """
    app = deploy_application(workflow, config)
    try:
        for source_id, payloads in feeds:
            app.feed(source_id, payloads)
        metrics = app.await_quiescence(timeout=timeout)
    finally:
        app.close()
    return metrics, app


def collecting_sink():
    """A sink spec plus the list its records land in (append is atomic)."""
    collected = []
    return ops.sink(collected.append, name="sink"), collected


def wordcount_fixture_workflow(strategy, sink_consumer=None):
    """source -> count -> sink with an explicitly supplied count strategy."""
    from streamloom.bench import word_count_operation

    b = WorkflowBuilder()
    b.add(ops.source(), name="source")
    b.add(word_count_operation(), strategy=strategy, name="count")
    b.add(ops.sink(sink_consumer), name="sink")
    b.chain("source", "count", "sink")
    return b.build()


def sends_between(app, src_refs, dst_refs, records_only=True):
    """Trace entries (sender worker id, dst worker id, message) filtered to
    the given sender/receiver groups."""
    src_ids = {r.worker_id for r in src_refs}
    dst_ids = {r.worker_id for r in dst_refs}
    picked = []
    for kind, sender, dst, message in app.trace:
        if kind != "send" or sender not in src_ids or dst not in dst_ids:
            continue
        if records_only and type(message) is not DataRecord:
            continue
        picked.append((sender, dst, message))
    return picked


def sink_multiset(collected):
    from oracles import freeze

    return Counter(freeze(x) for x in collected)

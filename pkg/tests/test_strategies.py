from collections import Counter, defaultdict

import pytest

from conftest import collecting_sink, run_workflow, sends_between, wordcount_fixture_workflow
from oracles import wordcount_fold
from reference_murmur import reference_murmur3_32

from streamloom import ClusterConfig, DataRecord, deploy_application, imbalance
from streamloom.bench import ZipfConfig, uniform_words, zipf_generate
from streamloom.hashing import hash_key, key_bytes
from streamloom.strategies import (
    SplitStrategyConfig,
    d_choices_strategy,
    keyed_state_strategy,
    pkg_strategy,
    shuffle_strategy,
    stateless_per_node_strategy,
    strategy_by_name,
    w_choices_strategy,
)

ZIPF_WORDS = None


def zipf_words():
    global ZIPF_WORDS
    if ZIPF_WORDS is None:
        ZIPF_WORDS = zipf_generate(
            ZipfConfig(vocabulary=10_000, exponent=2.0, record_count=100_000, seed=42)
        )
    return ZIPF_WORDS


def run_counting(strategy, words, *, nodes=4, seed=42, trace=False, merge=False,
                 sink_consumer=None):
    wf = wordcount_fixture_workflow(strategy, sink_consumer)
    cfg = ClusterConfig(node_count=nodes, seed=seed, deterministic=True, trace=trace)
    return run_workflow(wf, cfg, [("source", words)], timeout=300)


def routing_by_key(app):
    """key -> {forwarder: set of buckets} from the recorded sends."""
    forwarders = app.worker_refs("count", "forwarder")
    buckets = app.worker_refs("count", "bucket")
    spread = defaultdict(lambda: defaultdict(set))
    order = defaultdict(list)
    bucket_index = {ref.worker_id: i for i, ref in enumerate(buckets)}
    for sender, dst, message in sends_between(app, forwarders, buckets):
        word = message.payload
        spread[word][sender].add(bucket_index[dst])
        order[sender].append((word, bucket_index[dst]))
    return spread, order


class TestStatelessPerNode:
    def test_records_stay_on_their_node(self):
        from test_core import sink_op, source_op
        from streamloom.core import WorkflowBuilder

        b = WorkflowBuilder()
        b.add(source_op(), name="src")
        b.add(sink_op(), name="sink")
        b.chain("src", "sink")
        app = deploy_application(b.build(), ClusterConfig(node_count=2, deterministic=True))
        app.feed("src", range(10))  # feeder 0 -> node 0
        app.feed("src", range(10))  # feeder 1 -> node 1
        metrics = app.await_quiescence(timeout=30)
        app.close()
        assert metrics.remote_sends() == 0
        assert sum(metrics.node_local_sends.values()) > 0
        per_node = Counter(
            w.ref.node_id for w in metrics.workers.values() if w.wf_node == "sink"
            for _ in range(w.processed_count)
        )
        assert per_node == {0: 10, 1: 10}


class TestShuffle:
    def test_single_bucket_takes_everything(self):
        metrics, _ = run_counting(shuffle_strategy(1), ["a", "b", "a"])
        assert imbalance(metrics, "count") == pytest.approx(1.0)

    def test_uniform_load_near_even(self):
        words = uniform_words(10_000, 100_000, seed=9)
        metrics, _ = run_counting(shuffle_strategy(80), words, seed=9)
        assert imbalance(metrics, "count") <= 1.15

    def test_eighty_workers_round_robin_on_ten_nodes(self):
        wf = wordcount_fixture_workflow(shuffle_strategy(80))
        app = deploy_application(wf, ClusterConfig(node_count=10, deterministic=True))
        per_node = Counter(ref.node_id for ref in app.worker_refs("count", "bucket"))
        app.close()
        assert per_node == {nid: 8 for nid in range(10)}

    def test_worker_count_validation(self):
        with pytest.raises(ValueError):
            shuffle_strategy(0)


class TestKeyedState:
    def test_every_key_on_exactly_one_worker(self):
        got = []
        words = [f"k{i % 23}" for i in range(500)]
        metrics, app = run_counting(keyed_state_strategy(), words, trace=True,
                                    sink_consumer=got.append)
        aggregators = app.worker_refs("count", "aggregator")
        by_key = defaultdict(set)
        entity_ids = {-e.sender_id for e in app._driver_entities}  # noqa: SLF001
        for kind, sender, dst, message in app.trace:
            if kind != "send" or type(message) is not DataRecord:
                continue
            if dst in {r.worker_id for r in aggregators}:
                by_key[message.payload].add(dst)
        assert by_key and all(len(v) == 1 for v in by_key.values())

    def test_single_aggregator_mod_one(self):
        metrics, app = run_counting(keyed_state_strategy(1), ["a", "b", "c"] * 5)
        assert len(app.worker_refs("count", "aggregator")) == 1
        assert metrics.total_sink_records == 15

    def test_assignment_matches_independent_hash_recomputation(self):
        words = [f"key{i}" for i in range(100)]
        metrics, app = run_counting(keyed_state_strategy(4), words * 2, trace=True)
        aggregators = app.worker_refs("count", "aggregator")
        index_of = {ref.worker_id: i for i, ref in enumerate(aggregators)}
        for kind, sender, dst, message in app.trace:
            if kind != "send" or type(message) is not DataRecord:
                continue
            if dst in index_of:
                expected = reference_murmur3_32(key_bytes(message.payload), 0) % 4
                assert index_of[dst] == expected

    def test_per_key_output_order_matches_input_order(self):
        got = []
        words = ["a", "b", "a", "a", "b"]
        run_counting(keyed_state_strategy(4), words, sink_consumer=got.append)
        for word, final in wordcount_fold(words).items():
            seen = [count for w, count in got if w == word]
            assert seen == list(range(1, final + 1))


class TestPartialKeyGrouping:
    def test_worker_count_validation(self):
        with pytest.raises(ValueError):
            pkg_strategy(SplitStrategyConfig(worker_count=1))

    def test_each_key_touches_at_most_two_buckets_per_forwarder(self):
        words = [f"k{i % 50}" for i in range(2000)]
        _, app = run_counting(pkg_strategy(SplitStrategyConfig(worker_count=8)),
                              words, trace=True)
        spread, _ = routing_by_key(app)
        for word, per_forwarder in spread.items():
            for buckets in per_forwarder.values():
                assert len(buckets) <= 2

    def test_colliding_candidates_use_single_bucket(self):
        w = 4
        word = next(
            f"c{i}" for i in range(10_000)
            if hash_key(f"c{i}", 1) % w == hash_key(f"c{i}", 2) % w
        )
        _, app = run_counting(pkg_strategy(SplitStrategyConfig(worker_count=w)),
                              [word] * 40, trace=True)
        spread, _ = routing_by_key(app)
        assert all(len(b) == 1 for per_f in spread.values() for b in per_f.values())

    def test_least_loaded_candidate_chosen(self):
        words = [f"k{i % 20}" for i in range(1500)]
        w = 8
        _, app = run_counting(pkg_strategy(SplitStrategyConfig(worker_count=w)),
                              words, trace=True)
        _, order = routing_by_key(app)
        for sends in order.values():
            counts = [0] * w
            for word, chosen in sends:
                c1 = hash_key(word, 1) % w
                c2 = hash_key(word, 2) % w
                best = min((c1, c2), key=lambda b: (counts[b], b))
                assert chosen == best
                counts[chosen] += 1

    def test_skewed_imbalance_below_keyed_state(self):
        words = zipf_words()
        kg_metrics, _ = run_counting(keyed_state_strategy(80), words)
        pkg_metrics, _ = run_counting(pkg_strategy(SplitStrategyConfig(worker_count=80)),
                                      words)
        kg = imbalance(kg_metrics, "count")
        pkg = imbalance(pkg_metrics, "count")
        assert pkg < kg


class TestDWChoices:
    def test_choices_bounded_by_worker_count(self):
        with pytest.raises(ValueError):
            d_choices_strategy(SplitStrategyConfig(worker_count=3, choices=4))

    def test_head_key_spreads_wide(self):
        words = zipf_words()
        dc_cfg = SplitStrategyConfig(worker_count=80, choices=4)
        _, dc_app = run_counting(d_choices_strategy(dc_cfg), words, trace=True)
        spread, _ = routing_by_key(dc_app)
        top = spread["w1"]
        assert top, "rank-1 key unseen"
        for buckets in top.values():
            assert len(buckets) >= 3
        for word, per_f in spread.items():
            for buckets in per_f.values():
                assert len(buckets) <= 4

        _, wc_app = run_counting(w_choices_strategy(SplitStrategyConfig(worker_count=80)),
                                 words, trace=True)
        wc_spread, _ = routing_by_key(wc_app)
        for buckets in wc_spread["w1"].values():
            assert len(buckets) >= 40

    def test_uniform_stream_routes_like_pkg(self):
        words = uniform_words(10_000, 10_000, seed=3)
        cfg = SplitStrategyConfig(worker_count=16)
        _, pkg_app = run_counting(pkg_strategy(cfg), words, trace=True, seed=5)
        _, dc_app = run_counting(d_choices_strategy(cfg), words, trace=True, seed=5)
        _, pkg_order = routing_by_key(pkg_app)
        _, dc_order = routing_by_key(dc_app)
        assert pkg_order == dc_order

    def test_w_choices_single_worker(self):
        metrics, app = run_counting(
            w_choices_strategy(SplitStrategyConfig(worker_count=1)), ["a", "b"] * 10
        )
        buckets = app.worker_refs("count", "bucket")
        assert len(buckets) == 1
        assert metrics.workers[buckets[0].worker_id].processed_count == 20


class TestFlushMerge:
    def test_partials_merge_to_single_record(self):
        got = []
        cfg = SplitStrategyConfig(worker_count=8, merge_enabled=True)
        _, app = run_counting(pkg_strategy(cfg), ["w"] * 7, trace=True,
                              sink_consumer=got.append)
        assert got == [("w", 7)]
        # The key really was split before the merge.
        spread, _ = routing_by_key(app)
        assert sum(len(b) for b in spread["w"].values()) == 2

    def test_merge_disabled_means_no_flush_records(self):
        got = []
        cfg = SplitStrategyConfig(worker_count=8, merge_enabled=False)
        run_counting(pkg_strategy(cfg), ["w"] * 7, sink_consumer=got.append)
        # Only per-record partial emissions arrive.
        assert len(got) == 7
        assert got[-1][0] == "w"

    def test_merge_multiset_equals_fold_for_sg(self):
        got = []
        words = [f"k{i % 9}" for i in range(200)]
        run_counting(shuffle_strategy(8, merge_enabled=True), words,
                     sink_consumer=got.append)
        assert Counter(dict(got)) == wordcount_fold(words)
        assert len(got) == 9

    def test_kg_ignores_merge_flag(self):
        words = ["a", "b", "a", "c", "a"]
        got_plain = []
        run_counting(strategy_by_name("kg", 8, merge_enabled=False), words,
                     sink_consumer=got_plain.append)
        got_merge = []
        run_counting(strategy_by_name("kg", 8, merge_enabled=True), words,
                     sink_consumer=got_merge.append)
        assert got_plain == got_merge

    def test_merge_required_callback_enforced(self):
        from streamloom import InvalidWorkflow, operation, validate_workflow
        from streamloom.core import WorkflowBuilder
        from test_core import source_op

        no_merge = operation(
            "count_no_merge", inputs=["in"], outputs=["out"],
            callbacks={"key": lambda cb, w: w,
                       "react": lambda cb, w: cb.emit("out", (w, 1))},
            initial_state=0,
        )
        b = WorkflowBuilder()
        b.add(source_op(), name="source")
        b.add(no_merge, name="count",
              strategy=pkg_strategy(SplitStrategyConfig(worker_count=4, merge_enabled=True)))
        b.chain("source", "count")
        with pytest.raises(InvalidWorkflow, match="merge"):
            validate_workflow(b.build())

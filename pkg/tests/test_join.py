import random
from collections import Counter, defaultdict

import pytest

from conftest import collecting_sink, run_workflow
from oracles import cascade_join_oracle, freeze, nested_loop_join

from streamloom import ClusterConfig, DataRecord, deploy_application
from streamloom import operators as ops
from streamloom.bench import synthetic_tables
from streamloom.core import WorkflowBuilder
from streamloom.join import (
    BicliqueConfig,
    MatrixConfig,
    join_biclique_contrand_strategy,
    join_biclique_strategy,
    join_matrix_strategy,
    join_operation,
    query_join_workflow,
)

from test_core import source_op


def key_of(row):
    return row["k"]


def join_workflow(strategy, sink_consumer):
    b = WorkflowBuilder()
    b.add(source_op("left_source"), name="left_src")
    b.add(source_op("right_source"), name="right_src")
    b.add(join_operation("join", key_of, key_of), strategy=strategy, name="join")
    b.add(ops.sink(sink_consumer), name="sink")
    b.link("left_src", "out", "join", "left")
    b.link("right_src", "out", "join", "right")
    b.chain("join", "sink")
    return b.build()


def random_tables(rng, max_rows=120):
    n_left = rng.randrange(0, max_rows)
    n_right = rng.randrange(0, max_rows)
    n_keys = max(1, (n_left + n_right) // 3)
    left = [{"k": rng.randrange(n_keys), "v": f"l{i}"} for i in range(n_left)]
    right = [{"k": rng.randrange(n_keys), "v": f"r{i}"} for i in range(n_right)]
    return left, right


def run_join_strategy(strategy, left, right, *, seed=0, threaded=False, trace=False):
    got = []
    wf = join_workflow(strategy, got.append)
    cfg = ClusterConfig(
        node_count=4,
        seed=seed,
        deterministic=not threaded,
        executor_threads_per_node=3 if threaded else 1,
        trace=trace,
    )
    app = deploy_application(wf, cfg)
    try:
        if threaded:
            feeds = [app.feed("left_src", left, block=False),
                     app.feed("right_src", right, block=False)]
            for f in feeds:
                f.join()
        else:
            app.feed("left_src", left)
            app.feed("right_src", right)
        metrics = app.await_quiescence(timeout=120)
    finally:
        app.close()
    return got, metrics, app


def strategies_under_test():
    return {
        "jm_4x5": join_matrix_strategy(MatrixConfig(4, 5)),
        "jm_1x1": join_matrix_strategy(MatrixConfig(1, 1)),
        "jb": join_biclique_strategy(BicliqueConfig()),
        "jbcr_g5": join_biclique_contrand_strategy(BicliqueConfig(subgroups=5)),
        "jbcr_g1": join_biclique_contrand_strategy(BicliqueConfig(subgroups=1)),
    }


class TestOracleEquivalence:
    @pytest.mark.parametrize("name", sorted(strategies_under_test()))
    @pytest.mark.parametrize("threaded", [False, True])
    def test_random_instances_match_nested_loop(self, name, threaded):
        strategy = strategies_under_test()[name]
        rng = random.Random(hash((name, threaded)) & 0xFFFF)
        for case in range(6):
            left, right = random_tables(rng)
            got, _, _ = run_join_strategy(strategy, left, right,
                                          seed=case, threaded=threaded)
            expected = nested_loop_join(left, right, key_of, key_of)
            assert Counter(freeze(x) for x in got) == expected, (
                f"{name} diverged on case {case} (threaded={threaded})"
            )

    def test_single_matching_pair(self):
        for strategy in strategies_under_test().values():
            got, _, _ = run_join_strategy(
                strategy, [{"k": 1, "v": "l"}], [{"k": 1, "v": "r"}]
            )
            assert got == [({"k": 1, "v": "l"}, {"k": 1, "v": "r"})]

    def test_one_by_one_matrix_is_symmetric_hash_join(self):
        rng = random.Random(7)
        left, right = random_tables(rng)
        got, metrics, app = run_join_strategy(
            join_matrix_strategy(MatrixConfig(1, 1)), left, right
        )
        assert len(app.worker_refs("join", "cell")) == 1
        assert Counter(freeze(x) for x in got) == nested_loop_join(left, right, key_of, key_of)


class TestStorageFactors:
    def test_matrix_replication_counts(self):
        rng = random.Random(11)
        left, right = random_tables(rng, max_rows=80)
        _, metrics, _ = run_join_strategy(join_matrix_strategy(MatrixConfig(4, 5)),
                                          left, right)
        # Left rows live in every cell of one row (c copies), right rows in
        # every cell of one column (r copies).
        assert metrics.stored_tuples("join") == 5 * len(left) + 4 * len(right)

    def test_biclique_stores_each_tuple_once(self):
        rng = random.Random(13)
        left, right = random_tables(rng, max_rows=80)
        for strategy in (join_biclique_strategy(BicliqueConfig()),
                         join_biclique_contrand_strategy(BicliqueConfig(subgroups=5))):
            _, metrics, _ = run_join_strategy(strategy, left, right)
            assert metrics.stored_tuples("join") == len(left) + len(right)

    def test_matrix_stores_at_least_min_dim_times_biclique(self):
        rng = random.Random(17)
        left, right = random_tables(rng, max_rows=60)
        _, jm_metrics, _ = run_join_strategy(join_matrix_strategy(MatrixConfig(4, 5)),
                                             left, right)
        _, jb_metrics, _ = run_join_strategy(join_biclique_strategy(BicliqueConfig()),
                                             left, right)
        if jb_metrics.stored_tuples("join"):
            assert jm_metrics.stored_tuples("join") >= 4 * jb_metrics.stored_tuples("join")


class TestBicliqueProtocol:
    def test_contrand_g1_traces_like_plain_biclique(self):
        rng = random.Random(23)
        left, right = random_tables(rng, max_rows=60)
        traces = []
        for strategy in (join_biclique_strategy(BicliqueConfig()),
                         join_biclique_contrand_strategy(BicliqueConfig(subgroups=1))):
            _, _, app = run_join_strategy(strategy, left, right, seed=9, trace=True)
            traces.append([
                (sender, dst, freeze(message if type(message) is not DataRecord
                                     else message.payload))
                for kind, sender, dst, message in app.trace if kind == "send"
            ])
        assert traces[0] == traces[1]

    def test_contrand_probe_fanout_is_subgroup_size(self):
        left = [{"k": i, "v": f"l{i}"} for i in range(50)]
        right = [{"k": i, "v": f"r{i}"} for i in range(50)]
        _, _, app = run_join_strategy(
            join_biclique_contrand_strategy(BicliqueConfig(subgroups=5)),
            left, right, trace=True,
        )
        probes = defaultdict(set)
        for kind, sender, dst, message in app.trace:
            if kind == "send" and isinstance(message, tuple) and message and message[0] == "probe":
                stamp = message[4]
                probes[stamp].add(dst)
        assert probes
        # 10 joiners per side, 5 subgroups: every probe fans out to 2 joiners.
        assert all(len(dsts) == 2 for dsts in probes.values())

    def test_plain_biclique_probe_fanout_is_whole_side(self):
        left = [{"k": 1, "v": "l"}]
        right = [{"k": 1, "v": "r"}]
        _, _, app = run_join_strategy(join_biclique_strategy(BicliqueConfig()),
                                      left, right, trace=True)
        probes = defaultdict(set)
        for kind, sender, dst, message in app.trace:
            if kind == "send" and isinstance(message, tuple) and message and message[0] == "probe":
                probes[message[4]].add(dst)
        assert all(len(dsts) == 10 for dsts in probes.values())

    def test_duplicate_heavy_keys_no_duplicates_threaded(self):
        # Many records sharing few keys maximize the double-match hazard.
        left = [{"k": i % 3, "v": f"l{i}"} for i in range(60)]
        right = [{"k": i % 3, "v": f"r{i}"} for i in range(60)]
        expected = nested_loop_join(left, right, key_of, key_of)
        for seed in range(10):
            got, _, _ = run_join_strategy(join_biclique_strategy(BicliqueConfig()),
                                          left, right, seed=seed, threaded=True)
            assert Counter(freeze(x) for x in got) == expected

    def test_stamp_order_is_a_strict_total_order(self):
        from streamloom.join import _stamp_order

        stamps = [((c, s), side) for c in range(1, 4) for s in range(3)
                  for side in ("left", "right")]
        keys = [_stamp_order(st, side) for st, side in stamps]
        assert len(set(keys)) == len(keys)
        ordered = sorted(keys)
        for a, b in zip(ordered, ordered[1:]):
            assert a < b


class TestConfigs:
    def test_matrix_validation(self):
        with pytest.raises(ValueError):
            MatrixConfig(0, 5)
        assert MatrixConfig.parse("4x5") == MatrixConfig(4, 5)
        with pytest.raises(ValueError):
            MatrixConfig.parse("4by5")

    def test_biclique_validation(self):
        with pytest.raises(ValueError):
            BicliqueConfig(subgroups=3)  # does not divide 10
        with pytest.raises(ValueError):
            BicliqueConfig(watermark_interval=0)
        with pytest.raises(ValueError):
            join_biclique_strategy(BicliqueConfig(subgroups=5))

    def test_unknown_query_rejected(self):
        with pytest.raises(ValueError, match="unknown query"):
            query_join_workflow("q9", "jm")


class TestQueryCascades:
    def test_q5_has_three_join_nodes(self):
        wf = query_join_workflow("q5", "jm")
        joins = [nid for nid in wf.nodes if nid.startswith("join")]
        assert len(joins) == 3

    def test_q7_has_two_join_nodes(self):
        wf = query_join_workflow("q7", "jb")
        joins = [nid for nid in wf.nodes if nid.startswith("join")]
        assert len(joins) == 2

    def test_swapping_join_strategy_keeps_structure(self):
        jm = query_join_workflow("q7", "jm")
        jb = query_join_workflow("q7", "jb")
        assert list(jm.nodes) == list(jb.nodes)
        assert jm.links == jb.links

    @pytest.mark.parametrize("strategy", ["jm", "jb", "jbcr"])
    def test_q7_matches_three_table_oracle(self, strategy):
        tables = synthetic_tables(0.01, seed=3)
        stages = [
            (lambda n: n["nationkey"], lambda s: s["nationkey"], lambda l, r: {**l, **r}),
            (lambda row: row["suppkey"], lambda li: li["suppkey"], lambda l, r: {**l, **r}),
        ]
        expected = cascade_join_oracle(
            [tables.nation, tables.supplier, tables.lineitem], stages
        )
        sink_spec, got = collecting_sink()
        wf = query_join_workflow("q7", strategy, sink=sink_spec)
        app = deploy_application(wf, ClusterConfig(node_count=4, seed=5, deterministic=True))
        try:
            for name in ("nation", "supplier", "lineitem"):
                app.feed(name, tables.stream(name))
            metrics = app.await_quiescence(timeout=120)
        finally:
            app.close()
        assert Counter(freeze(x) for x in got) == expected
        assert metrics.total_sink_records == sum(expected.values())

    def test_q5_matches_four_table_oracle(self):
        tables = synthetic_tables(0.005, seed=4)
        stages = [
            (lambda r: r["regionkey"], lambda n: n["regionkey"], lambda l, r: {**l, **r}),
            (lambda row: row["nationkey"], lambda s: s["nationkey"], lambda l, r: {**l, **r}),
            (lambda row: row["suppkey"], lambda li: li["suppkey"], lambda l, r: {**l, **r}),
        ]
        expected = cascade_join_oracle(
            [tables.region, tables.nation, tables.supplier, tables.lineitem], stages
        )
        sink_spec, got = collecting_sink()
        wf = query_join_workflow("q5", "jm", sink=sink_spec)
        app = deploy_application(wf, ClusterConfig(node_count=4, seed=6, deterministic=True))
        try:
            for name in ("region", "nation", "supplier", "lineitem"):
                app.feed(name, tables.stream(name))
            metrics = app.await_quiescence(timeout=120)
        finally:
            app.close()
        assert Counter(freeze(x) for x in got) == expected

"""Distribution strategies for two-input equi-joins.

Join-Matrix replicates: a left record is stored in every cell of one random
row, a right record in every cell of one random column, so each (left,
right) pair meets in exactly one cell. Join-Biclique stores once: a record
is stored at a single same-side joiner and probed against all (or, for
ContRand, a key-chosen subgroup of) opposite-side joiners. Stores-once
joining needs duplicate suppression: every record is stamped by its node's
sender worker with a logical clock, a probe is matched only once the
watermark (minimum over all sender clocks known to the joiner) has passed
its stamp, and a (stored, probe) pair produces output only when the stored
stamp precedes the probe stamp in the total order (counter, sender, side
with left first). Exactly one of the two sites where a pair can meet
satisfies that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .core import (
    DataRecord,
    NodeSpec,
    OperationDef,
    StrategyDef,
    Workflow,
    WorkflowBuilder,
    operation,
)
from .hashing import hash_key
from .operators import sink as sink_spec
from .operators import source as source_spec

_INFINITE_CLOCK = float("inf")


@dataclass(frozen=True, slots=True)
class MatrixConfig:
    """r x c cell grid; left records go to rows, right records to columns.

    ``deterministic_assignment`` replaces the random row/column pick with the
    record's sequence counter modulo the dimension (round-robin).
    """

    rows: int
    cols: int
    deterministic_assignment: bool = False

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("matrix dimensions must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "MatrixConfig":
        try:
            rows, cols = text.lower().split("x")
            return cls(int(rows), int(cols))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"matrix must look like '4x5', got {text!r}") from exc


@dataclass(frozen=True, slots=True)
class BicliqueConfig:
    """Joiner pool sizes, subgroup count, and clock broadcast interval."""

    left_workers: int = 10
    right_workers: int = 10
    subgroups: int = 1
    watermark_interval: int = 64

    def __post_init__(self):
        if self.left_workers < 1 or self.right_workers < 1:
            raise ValueError("need at least one joiner per side")
        if self.subgroups < 1:
            raise ValueError("subgroups must be >= 1")
        if self.left_workers % self.subgroups or self.right_workers % self.subgroups:
            raise ValueError("subgroups must divide both joiner pool sizes")
        if self.watermark_interval < 1:
            raise ValueError("watermark_interval must be >= 1")


def join_operation(
    name: str,
    left_key: Callable,
    right_key: Callable,
    combine: Optional[Callable] = None,
) -> OperationDef:
    """An equi-join operation: ports left/right in, matched out.

    A pair matches iff ``left_key(l) == right_key(r)``; the ``join`` callback
    produces the output payload (``(l, r)`` unless ``combine`` is given).
    """

    def left_key_cb(cb, payload):
        return left_key(payload)

    def right_key_cb(cb, payload):
        return right_key(payload)

    def join_cb(cb, left, right):
        return combine(left, right) if combine is not None else (left, right)

    return operation(
        name,
        inputs=["left", "right"],
        outputs=["matched"],
        callbacks={"left_key": left_key_cb, "right_key": right_key_cb, "join": join_cb},
    )


_JOIN_CALLBACKS = frozenset({"left_key", "right_key", "join"})


def _side_key(ctx, record: DataRecord):
    cb = "left_key" if record.in_port == "left" else "right_key"
    return ctx.call(cb, args=(record.payload,), in_port=record.in_port).result


def join_matrix_strategy(config: MatrixConfig) -> StrategyDef:
    """Replicating r x c matrix join (JM)."""
    rows, cols = config.rows, config.cols

    def deploy(ctx):
        cells = [
            ctx.worker_on(i % ctx.node_count, {"left": {}, "right": {}}, "cell")
            for i in range(rows * cols)
        ]
        return {"cells": cells}

    def deliver(record, ctx):
        cells = ctx.deployment["cells"]
        if record.in_port == "left":
            row = (record.seq[1] % rows) if config.deterministic_assignment \
                else ctx.rng.randrange(rows)
            targets = cells[row * cols:(row + 1) * cols]
        else:
            col = (record.seq[1] % cols) if config.deterministic_assignment \
                else ctx.rng.randrange(cols)
            targets = cells[col::cols]
        for ref in targets:
            ctx.send(ref, record)

    def process(record, state, role, ctx):
        side = record.in_port
        other = "right" if side == "left" else "left"
        key = _side_key(ctx, record)
        state[side].setdefault(key, []).append(record.payload)
        ctx.add_stored(1)
        for stored in state[other].get(key, ()):
            if side == "left":
                res = ctx.call("join", args=(record.payload, stored))
            else:
                res = ctx.call("join", args=(stored, record.payload))
            ctx.emit({"matched": [res.result]})
        return state

    return StrategyDef(
        name="jm",
        deploy=deploy,
        deliver=deliver,
        process=process,
        required_callbacks=_JOIN_CALLBACKS,
        roles=frozenset({"cell"}),
        load_roles=frozenset({"cell"}),
    )


def _stamp_order(stamp: tuple, side: str) -> tuple:
    return (stamp[0], stamp[1], 0 if side == "left" else 1)


def _biclique_strategy(name: str, config: BicliqueConfig) -> StrategyDef:
    groups = config.subgroups
    left_sz = config.left_workers // groups
    right_sz = config.right_workers // groups

    def deploy(ctx):
        n_senders = ctx.node_count
        senders = [
            ctx.worker_on(
                nid,
                {"idx": nid, "counter": 0, "since_broadcast": 0, "peer_clocks": {}},
                "sender",
            )
            for nid in range(n_senders)
        ]

        def joiner_state():
            return {"table": {}, "buffer": [], "clocks": {i: 0 for i in range(n_senders)}}

        left = [
            ctx.worker_on(i % ctx.node_count, joiner_state(), "joiner_left")
            for i in range(config.left_workers)
        ]
        right = [
            ctx.worker_on((config.left_workers + i) % ctx.node_count, joiner_state(),
                          "joiner_right")
            for i in range(config.right_workers)
        ]
        return {"senders": senders, "left": left, "right": right}

    def deliver(record, ctx):
        ctx.send(ctx.deployment["senders"][ctx.node_id], record)

    def broadcast_clock(ctx, state, final: bool):
        message = ("clock", state["idx"], state["counter"], final)
        dep = ctx.deployment
        for ref in dep["left"]:
            ctx.send(ref, message)
        for ref in dep["right"]:
            ctx.send(ref, message)
        for ref in dep["senders"]:
            if ref.worker_id != ctx.self_ref().worker_id:
                ctx.send(ref, message)

    def sender_process(message, state, ctx):
        if type(message) is DataRecord:
            state["counter"] += 1
            stamp = (state["counter"], state["idx"])
            side = message.in_port
            key = _side_key(ctx, message)
            dep = ctx.deployment
            same_pool, opp_pool = (dep["left"], dep["right"]) if side == "left" \
                else (dep["right"], dep["left"])
            if groups > 1:
                sub = hash_key(key, 0) % groups
                same_sz = left_sz if side == "left" else right_sz
                opp_sz = right_sz if side == "left" else left_sz
                same_pool = same_pool[sub * same_sz:(sub + 1) * same_sz]
                opp_pool = opp_pool[sub * opp_sz:(sub + 1) * opp_sz]
            store_target = same_pool[ctx.rng.randrange(len(same_pool))]
            ctx.send(store_target, ("store", side, message.payload, key, stamp))
            probe = ("probe", side, message.payload, key, stamp)
            for ref in opp_pool:
                ctx.send(ref, probe)
            state["since_broadcast"] += 1
            if state["since_broadcast"] >= config.watermark_interval:
                broadcast_clock(ctx, state, final=False)
                state["since_broadcast"] = 0
            return state
        tag = message[0]
        if tag == "finalize":
            # End of input: this sender's clock will never advance again.
            broadcast_clock(ctx, state, final=True)
            return state
        if tag == "clock":
            state["peer_clocks"][message[1]] = message[2]
            return state
        raise ValueError(f"sender got unexpected message {message!r}")

    def drain_probes(state, ctx, my_side: str):
        watermark = min(state["clocks"].values())
        buffer = state["buffer"]
        ready = [p for p in buffer if p[3][0] <= watermark]
        if not ready:
            return
        state["buffer"] = [p for p in buffer if p[3][0] > watermark]
        ready.sort(key=lambda p: _stamp_order(p[3], p[2]))
        table = state["table"]
        for payload, key, probe_side, stamp in ready:
            assert stamp[0] <= watermark  # probes wait for the watermark
            order = _stamp_order(stamp, probe_side)
            for stored_payload, stored_stamp, stored_side in table.get(key, ()):
                if _stamp_order(stored_stamp, stored_side) < order:
                    if probe_side == "left":
                        res = ctx.call("join", args=(payload, stored_payload))
                    else:
                        res = ctx.call("join", args=(stored_payload, payload))
                    ctx.emit({"matched": [res.result]})

    def joiner_process(message, state, ctx, my_side: str):
        tag = message[0]
        if tag == "store":
            _, side, payload, key, stamp = message
            assert side == my_side
            state["table"].setdefault(key, []).append((payload, stamp, side))
            ctx.add_stored(1)
            return state
        if tag == "probe":
            _, side, payload, key, stamp = message
            state["buffer"].append((payload, key, side, stamp))
            drain_probes(state, ctx, my_side)
            return state
        if tag == "clock":
            _, idx, counter, final = message
            clocks = state["clocks"]
            clocks[idx] = _INFINITE_CLOCK if final else max(clocks[idx], counter)
            drain_probes(state, ctx, my_side)
            return state
        raise ValueError(f"joiner got unexpected message {message!r}")

    def process(message, state, role, ctx):
        if role == "sender":
            return sender_process(message, state, ctx)
        return joiner_process(message, state, ctx, "left" if role == "joiner_left" else "right")

    def flush(ctx):
        for ref in ctx.deployment["senders"]:
            ctx.send(ref, ("finalize",))

    return StrategyDef(
        name=name,
        deploy=deploy,
        deliver=deliver,
        process=process,
        flush=flush,
        required_callbacks=_JOIN_CALLBACKS,
        roles=frozenset({"sender", "joiner_left", "joiner_right"}),
        load_roles=frozenset({"joiner_left", "joiner_right"}),
    )


def join_biclique_strategy(config: BicliqueConfig) -> StrategyDef:
    """Store-once join with clock-based duplicate suppression (JB)."""
    if config.subgroups != 1:
        raise ValueError("plain join-biclique uses a single group; see the ContRand variant")
    return _biclique_strategy("jb", config)


def join_biclique_contrand_strategy(config: BicliqueConfig) -> StrategyDef:
    """JB with key-hashed subgroups: stores stay random within a subgroup,
    probes fan out only to the opposite side's same-index subgroup."""
    return _biclique_strategy("jbcr", config)


# --- cascades --------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class JoinStage:
    """Key extractors (and optional payload combiner) for one binary join."""

    left_key: Callable
    right_key: Callable
    combine: Optional[Callable] = None
    name: Optional[str] = None


def cascade_join_workflow(
    source_names,
    stages,
    strategy: StrategyDef,
    sink: Optional[NodeSpec] = None,
) -> Workflow:
    """Left-deep cascade: stage i joins the running result with source i+1.

    ``source_names`` supplies len(stages) + 1 source nodes; every join node
    uses ``strategy``. The sink receives the last stage's matches.
    """
    source_names = list(source_names)
    stages = list(stages)
    if len(source_names) != len(stages) + 1:
        raise ValueError("a cascade of n stages needs n + 1 sources")
    b = WorkflowBuilder()
    src_ids = [b.add(source_spec(), name=name) for name in source_names]
    prev = src_ids[0]
    for i, stage in enumerate(stages):
        op = join_operation(
            stage.name or f"join{i + 1}", stage.left_key, stage.right_key, stage.combine
        )
        join_id = b.add(op, strategy=strategy, name=op.name)
        b.chain(prev, join_id)  # first out-port -> left
        b.link(src_ids[i + 1], "out", join_id, "right")
        prev = join_id
    sink_id = b.add(sink if sink is not None else sink_spec(), name="sink")
    b.chain(prev, sink_id)
    return b.build()


def _merge_rows(left: dict, right: dict) -> dict:
    return {**left, **right}


_QUERY_PLANS = {
    # Left-deep parenthesizations; one join node per binary join.
    "q5": (
        ("region", "nation", "supplier", "lineitem"),
        (
            JoinStage(lambda r: r["regionkey"], lambda n: n["regionkey"], _merge_rows,
                      "join_region_nation"),
            JoinStage(lambda row: row["nationkey"], lambda s: s["nationkey"], _merge_rows,
                      "join_nation_supplier"),
            JoinStage(lambda row: row["suppkey"], lambda li: li["suppkey"], _merge_rows,
                      "join_supplier_lineitem"),
        ),
    ),
    "q7": (
        ("nation", "supplier", "lineitem"),
        (
            JoinStage(lambda n: n["nationkey"], lambda s: s["nationkey"], _merge_rows,
                      "join_nation_supplier"),
            JoinStage(lambda row: row["suppkey"], lambda li: li["suppkey"], _merge_rows,
                      "join_supplier_lineitem"),
        ),
    ),
}

JOIN_STRATEGY_NAMES = ("jm", "jb", "jbcr")


def join_strategy_by_name(
    name: str,
    matrix: Optional[MatrixConfig] = None,
    biclique: Optional[BicliqueConfig] = None,
) -> StrategyDef:
    if name == "jm":
        return join_matrix_strategy(matrix or MatrixConfig(4, 5))
    if name == "jb":
        return join_biclique_strategy(biclique or BicliqueConfig())
    if name == "jbcr":
        return join_biclique_contrand_strategy(
            biclique or BicliqueConfig(subgroups=5)
        )
    raise ValueError(f"unknown join strategy {name!r}")


def query_join_workflow(
    query: str,
    strategy_name: str,
    *,
    matrix: Optional[MatrixConfig] = None,
    biclique: Optional[BicliqueConfig] = None,
    sink: Optional[NodeSpec] = None,
) -> Workflow:
    """The benchmark join cascades: q5 has three join nodes, q7 two.

    Source node ids match the table names feeding them.
    """
    plan = _QUERY_PLANS.get(query)
    if plan is None:
        raise ValueError(f"unknown query {query!r} (expected one of {sorted(_QUERY_PLANS)})")
    source_names, stages = plan
    strategy = join_strategy_by_name(strategy_name, matrix, biclique)
    return cascade_join_workflow(source_names, stages, strategy, sink)

"""Built-in distribution strategies for stateless and key-based operations.

Strategies that must make stateful routing decisions (partial key grouping
and the d-/w-choice variants) do so with two worker roles: a *forwarder* per
node receives records from the stateless deliver hook and picks a target,
while *buckets* hold the partitioned operation state. Strategies that split
a key's state across buckets can merge the partials at quiescence through
the operation's ``merge`` callback; the merged result for each key is owned
by the bucket its hash maps to and is emitted downstream exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import DataRecord, StrategyDef
from .hashing import hash_key
from .sketch import SpaceSavingSketch

_MISSING = object()

DEFAULT_CHOICES = 4
DEFAULT_HEAD_FRACTION = 0.01


@dataclass(frozen=True, slots=True)
class SplitStrategyConfig:
    """Shared knobs of the key-splitting strategies.

    ``choices`` is how many candidate buckets a head key may use (d-choices
    only) and ``head_fraction`` the share of the stream seen so far above
    which a key counts as a head key. The sketch tracking head keys defaults
    to 2 / head_fraction entries.
    """

    worker_count: int
    choices: int = DEFAULT_CHOICES
    head_fraction: float = DEFAULT_HEAD_FRACTION
    sketch_capacity: int = 0
    merge_enabled: bool = False

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if not 0 < self.head_fraction < 1:
            raise ValueError("head_fraction must be in (0, 1)")
        if self.choices < 2:
            raise ValueError("choices must be >= 2")
        if self.sketch_capacity == 0:
            object.__setattr__(
                self, "sketch_capacity", math.ceil(2.0 / self.head_fraction)
            )


# --- shared machinery ----------------------------------------------------


def _fresh_bucket_state():
    return {"keyed": {}, "merged": {}, "marks": 0}


def _spawn_buckets(ctx, worker_count: int, role: str, keyed: bool) -> list:
    refs = []
    for i in range(worker_count):
        state = _fresh_bucket_state() if keyed else ctx.initial_state()
        refs.append(ctx.worker_on(i % ctx.node_count, state, role))
    return refs


def _react_plain(message, state, ctx):
    res = ctx.call("react", state=state, args=(message.payload,), in_port=message.in_port)
    ctx.emit(res.emit)
    return res.state


def _react_keyed(message, state, ctx, emit_records: bool):
    key = ctx.call("key", args=(message.payload,), in_port=message.in_port).result
    keyed = state["keyed"]
    sub = keyed.get(key, _MISSING)
    if sub is _MISSING:
        sub = ctx.initial_state()
    res = ctx.call("react", state=sub, args=(message.payload,), in_port=message.in_port)
    if emit_records:
        ctx.emit(res.emit)
    keyed[key] = res.state
    return state


def _bucket_process(message, state, ctx, worker_count: int, buckets_key: str,
                    emit_records: bool):
    """Bucket behavior shared by every splitting strategy: keyed reacts plus
    the flush/merge protocol (partials to key owners, owners emit once)."""
    if type(message) is DataRecord:
        return _react_keyed(message, state, ctx, emit_records)
    tag = message[0]
    if tag == "flush":
        buckets = ctx.deployment[buckets_key]
        for key, sub in state["keyed"].items():
            owner = buckets[hash_key(key, 0) % worker_count]
            ctx.send(owner, ("merge_part", key, sub))
        for ref in buckets:
            ctx.send(ref, ("flush_mark",))
        return state
    if tag == "merge_part":
        _, key, part = message
        merged = state["merged"]
        if key in merged:
            merged[key] = ctx.call("merge", args=(merged[key], part)).result
        else:
            merged[key] = part
        return state
    if tag == "flush_mark":
        state["marks"] += 1
        if state["marks"] == worker_count:
            out_port = ctx.operation.out_port_names()[0]
            for key, sub in state["merged"].items():
                ctx.emit({out_port: [(key, sub)]})
            state["merged"] = {}
        return state
    raise ValueError(f"bucket got unexpected message {message!r}")


def _merge_flush_hook(buckets_key: str):
    def flush(ctx):
        for ref in ctx.deployment[buckets_key]:
            ctx.send(ref, ("flush",))

    return flush


# --- stateless / shuffle / key grouping ----------------------------------


def stateless_per_node_strategy() -> StrategyDef:
    """One worker per node; records are handled on the node they appear on."""

    def deploy(ctx):
        spawned = ctx.on_all_nodes(lambda c: c.local_worker(c.initial_state(), "executor"))
        return [spawned[nid] for nid in sorted(spawned)]

    def deliver(record, ctx):
        ctx.send(ctx.deployment[ctx.node_id], record)

    def process(message, state, role, ctx):
        return _react_plain(message, state, ctx)

    return StrategyDef(
        name="stateless_per_node",
        deploy=deploy,
        deliver=deliver,
        process=process,
        required_callbacks=frozenset({"react"}),
        roles=frozenset({"executor"}),
        load_roles=frozenset({"executor"}),
    )


def shuffle_strategy(worker_count: int, merge_enabled: bool = False) -> StrategyDef:
    """Uniformly random bucket per record (SG).

    Buckets hold per-worker partial state: per-key when the operation has a
    ``key`` callback, one operation state otherwise.
    """
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")

    def deploy(ctx):
        keyed = "key" in ctx.operation.callbacks
        return {"buckets": _spawn_buckets(ctx, worker_count, "bucket", keyed),
                "keyed": keyed}

    def deliver(record, ctx):
        ctx.send(ctx.deployment["buckets"][ctx.rng.randrange(worker_count)], record)

    def process(message, state, role, ctx):
        if ctx.deployment["keyed"]:
            return _bucket_process(
                message, state, ctx, worker_count, "buckets",
                emit_records=not merge_enabled,
            )
        return _react_plain(message, state, ctx)

    required = {"react"}
    if merge_enabled:
        required |= {"key", "merge"}
    return StrategyDef(
        name="shuffle",
        deploy=deploy,
        deliver=deliver,
        process=process,
        flush=_merge_flush_hook("buckets") if merge_enabled else None,
        required_callbacks=frozenset(required),
        roles=frozenset({"bucket"}),
        load_roles=frozenset({"bucket"}),
    )


def keyed_state_strategy(worker_count: int | None = None) -> StrategyDef:
    """Hash-based key grouping (KG): every key lives on exactly one worker.

    By default one aggregator is spawned per node; pass ``worker_count`` to
    spread that many aggregators round-robin instead.
    """

    def deploy(ctx):
        if worker_count is None:
            spawned = ctx.on_all_nodes(lambda c: c.local_worker({}, "aggregator"))
            return [spawned[nid] for nid in sorted(spawned)]
        return [
            ctx.worker_on(i % ctx.node_count, {}, "aggregator")
            for i in range(worker_count)
        ]

    def deliver(record, ctx):
        key = ctx.call("key", args=(record.payload,), in_port=record.in_port).result
        aggregators = ctx.deployment
        ctx.send(aggregators[hash_key(key, 0) % len(aggregators)], record)

    def process(message, state, role, ctx):
        key = ctx.call("key", args=(message.payload,), in_port=message.in_port).result
        sub = state.get(key, _MISSING)
        if sub is _MISSING:
            sub = ctx.initial_state()
        res = ctx.call("react", state=sub, args=(message.payload,), in_port=message.in_port)
        ctx.emit(res.emit)
        state[key] = res.state
        return state

    return StrategyDef(
        name="keyed_state",
        deploy=deploy,
        deliver=deliver,
        process=process,
        required_callbacks=frozenset({"key", "react"}),
        roles=frozenset({"aggregator"}),
        load_roles=frozenset({"aggregator"}),
    )


# --- key-splitting strategies ---------------------------------------------


def _split_strategy(name: str, config: SplitStrategyConfig, candidate_fn) -> StrategyDef:
    """Forwarder/bucket topology shared by PKG and the d-/w-choice variants.

    The stateless deliver hook hands each record to the forwarder on the
    current node; the forwarder picks the least-loaded candidate bucket by
    its local sent counts (ties to the smaller index). ``candidate_fn``
    computes the candidate list from (key, forwarder state, config).
    """
    worker_count = config.worker_count

    def deploy(ctx):
        buckets = _spawn_buckets(ctx, worker_count, "bucket", keyed=True)
        forwarders = ctx.on_all_nodes(
            lambda c: c.local_worker(
                {"sent": [0] * worker_count, "sketch": None}, "forwarder"
            )
        )
        return {"buckets": buckets, "forwarders": forwarders}

    def deliver(record, ctx):
        ctx.send(ctx.deployment["forwarders"][ctx.node_id], record)

    def process(message, state, role, ctx):
        if role == "bucket":
            return _bucket_process(
                message, state, ctx, worker_count, "buckets",
                emit_records=not config.merge_enabled,
            )
        key = ctx.call("key", args=(message.payload,), in_port=message.in_port).result
        candidates = candidate_fn(key, state, config)
        sent = state["sent"]
        pick = min(candidates, key=lambda b: (sent[b], b))
        sent[pick] += 1
        ctx.send(ctx.deployment["buckets"][pick], message)
        return state

    required = {"key", "react"}
    if config.merge_enabled:
        required.add("merge")
    return StrategyDef(
        name=name,
        deploy=deploy,
        deliver=deliver,
        process=process,
        flush=_merge_flush_hook("buckets") if config.merge_enabled else None,
        required_callbacks=frozenset(required),
        roles=frozenset({"forwarder", "bucket"}),
        load_roles=frozenset({"bucket"}),
    )


def _two_choices(key, state, config):
    w = config.worker_count
    c1 = hash_key(key, 1) % w
    c2 = hash_key(key, 2) % w
    return (c1,) if c1 == c2 else (c1, c2)


def pkg_strategy(config: SplitStrategyConfig) -> StrategyDef:
    """Partial key grouping: each key is split over (at most) two buckets."""
    if config.worker_count < 2:
        raise ValueError("partial key grouping needs at least 2 workers")
    return _split_strategy("pkg", config, _two_choices)


def _sketch_of(state, config) -> SpaceSavingSketch:
    sketch = state["sketch"]
    if sketch is None:
        sketch = state["sketch"] = SpaceSavingSketch(config.sketch_capacity)
    return sketch


def _is_head(sketch, key, config) -> bool:
    # Below one sketch-capacity of observations every count trivially clears
    # a fractional threshold; routing stays two-choice until then.
    return sketch.n_seen >= sketch.capacity and sketch.is_heavy(key, config.head_fraction)


def _d_choice_candidates(key, state, config):
    sketch = _sketch_of(state, config).offer(key)
    if _is_head(sketch, key, config):
        w = config.worker_count
        return tuple(sorted({hash_key(key, i) % w for i in range(1, config.choices + 1)}))
    return _two_choices(key, state, config)


def _w_choice_candidates(key, state, config):
    sketch = _sketch_of(state, config).offer(key)
    if _is_head(sketch, key, config):
        return range(config.worker_count)
    return _two_choices(key, state, config)


def d_choices_strategy(config: SplitStrategyConfig) -> StrategyDef:
    """PKG topology, but head keys may use ``config.choices`` buckets."""
    if config.choices > config.worker_count:
        raise ValueError("choices cannot exceed worker_count")
    return _split_strategy("dc", config, _d_choice_candidates)


def w_choices_strategy(config: SplitStrategyConfig) -> StrategyDef:
    """PKG topology, but head keys may use every bucket."""
    return _split_strategy("wc", config, _w_choice_candidates)


def strategy_by_name(name: str, worker_count: int, merge_enabled: bool = False,
                     choices: int = DEFAULT_CHOICES,
                     head_fraction: float = DEFAULT_HEAD_FRACTION) -> StrategyDef:
    """Build one of the registered strategies: sg, kg, pkg, dc, wc."""
    if name == "sg":
        return shuffle_strategy(worker_count, merge_enabled=merge_enabled)
    if name == "kg":
        return keyed_state_strategy(worker_count)
    split = SplitStrategyConfig(
        worker_count=worker_count,
        choices=choices,
        head_fraction=head_fraction,
        merge_enabled=merge_enabled,
    )
    if name == "pkg":
        return pkg_strategy(split)
    if name == "dc":
        return d_choices_strategy(split)
    if name == "wc":
        return w_choices_strategy(split)
    raise ValueError(f"unknown strategy name {name!r}")


STRATEGY_NAMES = ("sg", "kg", "pkg", "dc", "wc")

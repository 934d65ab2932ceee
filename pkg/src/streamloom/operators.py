"""Operator-style sugar: prebuilt operations composable into pipelines.

Each constructor returns a :class:`NodeSpec` (operation + default strategy)
that drops into a workflow builder or chains with ``>>``. A workflow built
from these specs is indistinguishable from one built from explicit nodes.
"""

from __future__ import annotations

import inspect
from typing import Callable, Optional

from .core import Chain, NodeSpec, OperationDef, StrategyDef, Workflow, operation
from .strategies import keyed_state_strategy, stateless_per_node_strategy

# Shared defaults so repeated constructions compare equal structurally.
_STATELESS = stateless_per_node_strategy()
_KEYED = keyed_state_strategy()


def map(fn: Callable, *, strategy: Optional[StrategyDef] = None, name: str = "map") -> NodeSpec:
    """One-in one-out operation emitting ``fn(x)`` per record."""

    def react(cb, payload):
        cb.emit("out", fn(payload))

    op = operation(name, inputs=["in"], outputs=["out"], callbacks={"react": react},
                   default_strategy=_STATELESS)
    return NodeSpec(op, strategy=strategy)


def flat_map(fn: Callable, *, strategy: Optional[StrategyDef] = None,
             name: str = "flat_map") -> NodeSpec:
    """Emits every element of ``fn(x)``, in order."""

    def react(cb, payload):
        for item in fn(payload):
            cb.emit("out", item)

    op = operation(name, inputs=["in"], outputs=["out"], callbacks={"react": react},
                   default_strategy=_STATELESS)
    return NodeSpec(op, strategy=strategy)


def filter(predicate: Callable, *, strategy: Optional[StrategyDef] = None,
           name: str = "filter") -> NodeSpec:
    """Passes records through when ``predicate(x)`` holds."""

    def react(cb, payload):
        if predicate(payload):
            cb.emit("out", payload)

    op = operation(name, inputs=["in"], outputs=["out"], callbacks={"react": react},
                   default_strategy=_STATELESS)
    return NodeSpec(op, strategy=strategy)


def keyed_reduce(key_fn: Callable, update_fn: Callable, initial,
                 merge_fn: Optional[Callable] = None,
                 *, strategy: Optional[StrategyDef] = None,
                 name: str = "keyed_reduce") -> NodeSpec:
    """Stateful per-key reduction emitting (key, new state) on every update.

    ``update_fn`` takes the keyed state, or (state, payload). ``merge_fn``
    combines two partial states when a splitting strategy merges at
    quiescence; addition is the default, fitting counters and sums.
    """
    arity = len(inspect.signature(update_fn).parameters)

    def key(cb, payload):
        return key_fn(payload)

    def react(cb, payload):
        new = update_fn(cb.state) if arity == 1 else update_fn(cb.state, payload)
        cb.state = new
        cb.emit("out", (key_fn(payload), new))

    def merge(cb, a, b):
        return merge_fn(a, b) if merge_fn is not None else a + b

    op = operation(
        name,
        inputs=["in"],
        outputs=["out"],
        callbacks={"key": key, "react": react, "merge": merge},
        initial_state=initial,
        default_strategy=_KEYED,
    )
    return NodeSpec(op, strategy=strategy)


def _source_react(cb, payload):
    cb.emit("out", payload)


_SOURCE_OP = operation(
    "source", outputs=["out"], callbacks={"react": _source_react},
    default_strategy=_STATELESS,
)


def source(*, strategy: Optional[StrategyDef] = None, name: Optional[str] = None) -> NodeSpec:
    """A source node: zero in-ports, fed via the application's feed API."""
    return NodeSpec(_SOURCE_OP, strategy=strategy, name=name)


def _null_consumer(payload):
    return None


def _sink_op(consumer: Callable) -> OperationDef:
    def react(cb, payload):
        consumer(payload)

    return operation("sink", inputs=["in"], callbacks={"react": react},
                     default_strategy=_STATELESS)


_NULL_SINK_OP = _sink_op(_null_consumer)


def sink(consumer: Optional[Callable] = None, *, strategy: Optional[StrategyDef] = None,
         name: Optional[str] = None) -> NodeSpec:
    """A sink node: applies ``consumer`` to every record it receives.

    Sink record totals and first/last record times are tracked by the
    runtime regardless of the consumer.
    """
    op = _NULL_SINK_OP if consumer is None else _sink_op(consumer)
    return NodeSpec(op, strategy=strategy, name=name)


def pipeline(*specs: NodeSpec) -> Workflow:
    """Chain node specs first-out to first-in and build the workflow."""
    return Chain(specs).build()

"""Programming model: operations, distribution strategies and workflows.

An *operation* holds the data-processing logic of one workflow step as a set
of named callbacks over declared input/output ports. A *strategy* holds the
distribution logic for an operation as three hooks (deploy, deliver, process)
plus the callback names it requires. A *workflow* wires operations (each
paired with a strategy) into a DAG via port-to-port links.

Everything here is plain data plus pure functions; execution lives in
``streamloom.runtime``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence


class StreamloomError(Exception):
    """Base class for all errors raised by this package."""


class MetadataMissing(StreamloomError):
    """A record was inspected for runtime metadata it does not carry."""


class UnknownCallback(StreamloomError):
    pass


class UnknownOutPort(StreamloomError):
    pass


class CallbackFailed(StreamloomError):
    """A callback raised; carries the operation/callback and the cause."""

    def __init__(self, callback: str, cause: BaseException, node: Optional[str] = None):
        self.callback = callback
        self.cause = cause
        self.node = node
        where = f"{node}.{callback}" if node else callback
        super().__init__(f"callback {where} failed: {cause!r}")


class WorkflowBuildError(StreamloomError):
    pass


@dataclass(frozen=True, slots=True)
class Port:
    direction: str  # "in" | "out"
    name: str
    index: int


@dataclass(frozen=True, slots=True)
class DataRecord:
    """A payload plus runtime-attached metadata.

    ``in_port`` names the receiving operation's input port (None for records
    injected into a source, which has no inputs). ``seq`` is a
    (sender id, counter) pair; counters increase strictly per sender.
    """

    payload: Any
    in_port: Optional[str] = None
    seq: Optional[tuple] = None


def record_port(record: DataRecord) -> str:
    """Input port on which ``record`` reached the current operation."""
    if not isinstance(record, DataRecord) or record.in_port is None:
        raise MetadataMissing("record carries no input-port metadata")
    return record.in_port


@dataclass(frozen=True, slots=True)
class CallbackResult:
    """Outcome of one callback invocation: new state, return value, emissions.

    ``emit`` maps out-port name -> list of payloads in emission order; ports
    the callback did not emit on are absent.
    """

    state: Any
    result: Any
    emit: Mapping[str, list]


class CallbackContext:
    """Handle passed as first argument to every callback.

    Exposes the state slot, the input port of the record being processed, and
    ``emit`` for publishing payloads on the operation's output ports.
    """

    __slots__ = ("state", "in_port", "_out_ports", "_emitted")

    def __init__(self, state, in_port, out_ports):
        self.state = state
        self.in_port = in_port
        self._out_ports = out_ports
        self._emitted: dict = {}

    def emit(self, port: str, payload) -> None:
        if port not in self._out_ports:
            raise UnknownOutPort(f"operation has no out-port {port!r}")
        self._emitted.setdefault(port, []).append(payload)


def _make_ports(direction: str, names: Sequence[str]) -> tuple:
    seen = set()
    ports = []
    for i, name in enumerate(names):
        if name in seen:
            raise WorkflowBuildError(f"duplicate {direction}-port name {name!r}")
        seen.add(name)
        ports.append(Port(direction, name, i))
    return tuple(ports)


@dataclass(frozen=True, slots=True)
class OperationDef:
    """A named data-processing step: ports, callbacks, initial state.

    Callbacks take a :class:`CallbackContext` followed by their own arguments
    and must be pure functions of (state, args, in_port). ``work_callbacks``
    names the callbacks the runtime charges simulated work against.
    """

    name: str
    in_ports: tuple
    out_ports: tuple
    callbacks: Mapping[str, Callable]
    initial_state: Any = None
    default_strategy: Optional["StrategyDef"] = None
    work_callbacks: frozenset = frozenset()

    def in_port_names(self) -> tuple:
        return tuple(p.name for p in self.in_ports)

    def out_port_names(self) -> tuple:
        return tuple(p.name for p in self.out_ports)


def operation(
    name: str,
    *,
    inputs: Sequence[str] = (),
    outputs: Sequence[str] = (),
    callbacks: Mapping[str, Callable],
    initial_state: Any = None,
    default_strategy: Optional["StrategyDef"] = None,
    work_callbacks: Iterable[str] = (),
) -> OperationDef:
    """Build an :class:`OperationDef`, assigning port indices in order."""
    return OperationDef(
        name=name,
        in_ports=_make_ports("in", inputs),
        out_ports=_make_ports("out", outputs),
        callbacks=dict(callbacks),
        initial_state=initial_state,
        default_strategy=default_strategy,
        work_callbacks=frozenset(work_callbacks),
    )


def invoke_callback(
    op: OperationDef,
    name: str,
    state: Any = None,
    args: Sequence = (),
    in_port: Optional[str] = None,
) -> CallbackResult:
    """Invoke callback ``name`` of ``op`` and collect its result.

    Returns the (possibly updated) state, the callback's return value, and
    its emissions in order. A raising callback surfaces as CallbackFailed.
    """
    fn = op.callbacks.get(name)
    if fn is None:
        raise UnknownCallback(f"operation {op.name!r} has no callback {name!r}")
    cb = CallbackContext(state, in_port, op.out_port_names())
    try:
        result = fn(cb, *args)
    except StreamloomError:
        raise
    except Exception as exc:
        raise CallbackFailed(name, exc) from exc
    return CallbackResult(state=cb.state, result=result, emit=cb._emitted)


@dataclass(frozen=True, slots=True)
class StrategyDef:
    """Distribution logic for one operation.

    ``deploy(ctx)`` spawns workers and returns the node's deployment data;
    ``deliver(record, ctx)`` routes an incoming record to a worker and must
    hold no mutable state; ``process(message, state, role, ctx)`` handles one
    worker message, its return value replacing the worker's state. ``flush``,
    when present, runs once at quiescence (end-of-input protocols).
    """

    name: str
    deploy: Callable
    deliver: Callable
    process: Callable
    flush: Optional[Callable] = None
    required_callbacks: frozenset = frozenset()
    roles: frozenset = frozenset()
    load_roles: frozenset = frozenset()


@dataclass(frozen=True, slots=True)
class WorkflowNode:
    id: str
    operation: OperationDef
    strategy: StrategyDef
    args: Any = None


@dataclass(frozen=True, slots=True)
class Link:
    src: str
    out_port: str
    dst: str
    in_port: str


@dataclass(frozen=True, slots=True)
class Workflow:
    """A DAG of workflow nodes connected by port-to-port links."""

    nodes: Mapping[str, WorkflowNode]
    links: tuple

    def source_ids(self) -> tuple:
        return tuple(nid for nid, n in self.nodes.items() if not n.operation.in_ports)

    def sink_ids(self) -> tuple:
        return tuple(nid for nid, n in self.nodes.items() if not n.operation.out_ports)

    def out_links(self, node_id: str, port: str) -> tuple:
        return tuple(l for l in self.links if l.src == node_id and l.out_port == port)


@dataclass(frozen=True, slots=True)
class NodeSpec:
    """An operation plus optional strategy/args/name, ready to drop into a
    workflow. ``>>`` chains specs the way the builder's ``chain`` does."""

    operation: OperationDef
    strategy: Optional[StrategyDef] = None
    args: Any = None
    name: Optional[str] = None

    def __rshift__(self, other):
        return Chain([self]) >> other


class Chain:
    """A linear pipeline of node specs built with ``>>``."""

    def __init__(self, specs):
        self.specs = list(specs)

    def __rshift__(self, other):
        if isinstance(other, NodeSpec):
            return Chain(self.specs + [other])
        if isinstance(other, Chain):
            return Chain(self.specs + other.specs)
        raise TypeError(f"cannot chain {other!r}")

    def build(self) -> "Workflow":
        b = WorkflowBuilder()
        ids = [b.add(spec) for spec in self.specs]
        b.chain(*ids)
        return b.build()


class WorkflowBuilder:
    """Accumulates nodes and links, then materializes a Workflow.

    Node ids are caller-supplied or generated from the operation name. Links
    are given port-to-port; ``chain`` wires the first out-port of each node
    to the first in-port of the next.
    """

    def __init__(self):
        self._nodes: dict = {}
        self._links: list = []

    def add(
        self,
        op,
        *,
        strategy: Optional[StrategyDef] = None,
        args: Any = None,
        name: Optional[str] = None,
    ) -> str:
        if isinstance(op, NodeSpec):
            strategy = strategy or op.strategy
            args = args if args is not None else op.args
            name = name or op.name
            op = op.operation
        strategy = strategy or op.default_strategy
        if strategy is None:
            raise WorkflowBuildError(
                f"no strategy for operation {op.name!r} and no default declared"
            )
        node_id = name or self._fresh_id(op.name)
        if node_id in self._nodes:
            raise WorkflowBuildError(f"duplicate node id {node_id!r}")
        self._nodes[node_id] = WorkflowNode(node_id, op, strategy, args)
        return node_id

    def _fresh_id(self, base: str) -> str:
        candidate = base
        n = 1
        while candidate in self._nodes:
            n += 1
            candidate = f"{base}_{n}"
        return candidate

    def link(self, src: str, out_port: str, dst: str, in_port: str) -> "WorkflowBuilder":
        for node_id in (src, dst):
            if node_id not in self._nodes:
                raise WorkflowBuildError(f"link references unknown node {node_id!r}")
        if out_port not in self._nodes[src].operation.out_port_names():
            raise WorkflowBuildError(f"node {src!r} has no out-port {out_port!r}")
        if in_port not in self._nodes[dst].operation.in_port_names():
            raise WorkflowBuildError(f"node {dst!r} has no in-port {in_port!r}")
        link = Link(src, out_port, dst, in_port)
        if link not in self._links:
            self._links.append(link)
        return self

    def chain(self, *node_ids: str) -> "WorkflowBuilder":
        for src, dst in zip(node_ids, node_ids[1:]):
            for node_id in (src, dst):
                if node_id not in self._nodes:
                    raise WorkflowBuildError(f"chain references unknown node {node_id!r}")
            outs = self._nodes[src].operation.out_ports
            ins = self._nodes[dst].operation.in_ports
            if not outs:
                raise WorkflowBuildError(f"cannot chain from {src!r}: it has no out-ports")
            if not ins:
                raise WorkflowBuildError(f"cannot chain into {dst!r}: it has no in-ports")
            self.link(src, outs[0].name, dst, ins[0].name)
        return self

    def build(self) -> Workflow:
        return Workflow(nodes=dict(self._nodes), links=tuple(self._links))


def build_workflow(nodes=None, links=(), chains=()) -> Workflow:
    """One-shot workflow construction.

    ``nodes`` maps node id -> OperationDef or NodeSpec; ``links`` is an
    iterable of (src, out_port, dst, in_port); ``chains`` an iterable of node
    id sequences wired first-out to first-in.
    """
    b = WorkflowBuilder()
    for node_id, spec in (nodes or {}).items():
        b.add(spec, name=node_id)
    for src, out_port, dst, in_port in links:
        b.link(src, out_port, dst, in_port)
    for seq in chains:
        b.chain(*seq)
    return b.build()


# --- validation ---------------------------------------------------------


@dataclass(frozen=True)
class CycleDetected:
    nodes: tuple

    def __str__(self):
        return f"cycle through nodes {', '.join(self.nodes)}"


@dataclass(frozen=True)
class UnknownPort:
    link: Link
    reason: str

    def __str__(self):
        return f"bad link {self.link}: {self.reason}"


@dataclass(frozen=True)
class MissingCallback:
    node: str
    callback: str

    def __str__(self):
        return f"node {self.node!r}: operation lacks callback {self.callback!r} required by its strategy"


class InvalidWorkflow(StreamloomError):
    """Raised by validate_workflow; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))


def workflow_errors(workflow: Workflow) -> list:
    """All structural violations in ``workflow`` (empty when valid)."""
    errors: list = []
    for link in workflow.links:
        src = workflow.nodes.get(link.src)
        dst = workflow.nodes.get(link.dst)
        if src is None:
            errors.append(UnknownPort(link, f"unknown source node {link.src!r}"))
        elif link.out_port not in src.operation.out_port_names():
            errors.append(UnknownPort(link, f"{link.src!r} has no out-port {link.out_port!r}"))
        if dst is None:
            errors.append(UnknownPort(link, f"unknown destination node {link.dst!r}"))
        elif link.in_port not in dst.operation.in_port_names():
            errors.append(UnknownPort(link, f"{link.dst!r} has no in-port {link.in_port!r}"))

    cycle = _find_cycle(workflow)
    if cycle:
        errors.append(CycleDetected(tuple(cycle)))

    for node_id, node in workflow.nodes.items():
        for cb in sorted(node.strategy.required_callbacks):
            if cb not in node.operation.callbacks:
                errors.append(MissingCallback(node_id, cb))
    return errors


def validate_workflow(workflow: Workflow) -> Workflow:
    """Return ``workflow`` if structurally sound, else raise InvalidWorkflow.

    Sound means: the link graph is acyclic, every link endpoint resolves to a
    declared port, and every node's operation implements all callbacks its
    strategy requires. All violations are reported at once.
    """
    errors = workflow_errors(workflow)
    if errors:
        raise InvalidWorkflow(errors)
    return workflow


def _adjacency(workflow: Workflow) -> dict:
    adj = {nid: [] for nid in workflow.nodes}
    for link in workflow.links:
        if link.src in adj and link.dst in adj and link.dst not in adj[link.src]:
            adj[link.src].append(link.dst)
    return adj


def _find_cycle(workflow: Workflow):
    adj = _adjacency(workflow)
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in adj}
    stack: list = []

    def visit(nid):
        color[nid] = GRAY
        stack.append(nid)
        for nxt in adj[nid]:
            if color[nxt] == GRAY:
                return stack[stack.index(nxt):]
            if color[nxt] == WHITE:
                cycle = visit(nxt)
                if cycle:
                    return cycle
        stack.pop()
        color[nid] = BLACK
        return None

    for nid in adj:
        if color[nid] == WHITE:
            cycle = visit(nid)
            if cycle:
                return cycle
    return None


def topological_order(workflow: Workflow) -> list:
    """Node ids in topological order (raises InvalidWorkflow on cycles)."""
    adj = _adjacency(workflow)
    indeg = {nid: 0 for nid in adj}
    for nid, nexts in adj.items():
        for nxt in nexts:
            indeg[nxt] += 1
    ready = [nid for nid in adj if indeg[nid] == 0]
    order = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        for nxt in adj[nid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if len(order) != len(adj):
        cycle = _find_cycle(workflow)
        raise InvalidWorkflow([CycleDetected(tuple(cycle or ()))])
    return order

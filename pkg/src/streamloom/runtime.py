"""Simulated multi-node cluster executing deployed workflows.

The "cluster" lives in one process: logical nodes are scheduling domains,
workers are role-tagged stateful entities with FIFO mailboxes, and "remote"
sends cross node ids and are counted rather than serialized over a network.
Placement, locality and message counts behave as they would on a real
cluster; wire protocols do not exist.

Two executors are provided. The threaded executor runs a configurable number
of worker threads per logical node; a single worker is never active on two
threads at once and delivery between any fixed (sender, receiver) pair is
FIFO. The deterministic executor runs every worker on the driver thread in a
fixed round-robin order, so that a fixed seed yields identical runs.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import os
import pickle
import threading
import time
from collections import deque
from dataclasses import dataclass
from random import Random
from typing import Callable, Iterable, Optional

from .core import (
    CallbackFailed,
    CallbackResult,
    DataRecord,
    StreamloomError,
    UnknownOutPort,
    Workflow,
    invoke_callback,
    topological_order,
    validate_workflow,
)

log = logging.getLogger("streamloom")
_env_level = os.environ.get("STREAMLOOM_LOG_LEVEL")
if _env_level:
    logging.basicConfig()
    log.setLevel(_env_level.upper())


class ConfigError(StreamloomError):
    pass


class UnknownNode(StreamloomError):
    pass


class InvalidWorkerRef(StreamloomError):
    pass


class NodeHasInPorts(StreamloomError):
    pass


class DeployHookFailed(StreamloomError):
    def __init__(self, node: str, cause: BaseException):
        self.node = node
        self.cause = cause
        super().__init__(f"deploy hook of node {node!r} failed: {cause!r}")


class ProcessHookFailed(StreamloomError):
    def __init__(self, worker_ref, cause: BaseException):
        self.worker_ref = worker_ref
        self.cause = cause
        super().__init__(f"process hook of worker {worker_ref} failed: {cause!r}")


class QuiescenceTimeout(StreamloomError):
    def __init__(self, metrics):
        self.metrics = metrics
        super().__init__("application did not quiesce before the timeout")


class ZeroRecords(StreamloomError):
    pass


class ZeroElapsed(StreamloomError):
    pass


@dataclass(frozen=True, slots=True)
class ClusterConfig:
    """Shape and behavior of the simulated cluster.

    All randomness in the runtime and the built-in strategies derives from
    ``seed``. ``simulated_work`` (seconds) is charged whenever a callback the
    operation designates as work is invoked; it occupies the executing thread
    for that long, modeling CPU occupancy of one core.
    """

    node_count: int = 4
    executor_threads_per_node: int = 1
    seed: int = 0
    simulated_work: float = 0.0
    deterministic: bool = False
    trace: bool = False

    def __post_init__(self):
        if self.node_count < 1:
            raise ConfigError("node_count must be >= 1")
        if self.executor_threads_per_node < 1:
            raise ConfigError("executor_threads_per_node must be >= 1")
        if self.simulated_work < 0:
            raise ConfigError("simulated_work must be >= 0")


@dataclass(frozen=True, slots=True)
class WorkerRef:
    """Handle to a worker; valid only within the application that made it."""

    node_id: int
    worker_id: int
    role: str


class _LockedRandom:
    """A Random stream safe to draw from on any executor thread."""

    __slots__ = ("_rng", "_lock")

    def __init__(self, rng: Random):
        self._rng = rng
        self._lock = threading.Lock()

    def random(self) -> float:
        with self._lock:
            return self._rng.random()

    def randrange(self, n: int) -> int:
        with self._lock:
            return self._rng.randrange(n)

    def choice(self, seq):
        with self._lock:
            return self._rng.choice(seq)

    def sample(self, population, k):
        with self._lock:
            return self._rng.sample(population, k)


class _Worker:
    """Internal worker: state, FIFO mailbox, and per-worker counters.

    Counters are written only from the worker's own processing turn (or the
    single thread that owns a driver entity), so they need no locks.
    """

    __slots__ = (
        "app", "ref", "wf_node_id", "node_id", "role", "state",
        "mailbox", "lock", "scheduled", "active",
        "sender_id", "_seq", "local_sends", "remote_sends",
        "link_counts", "delivered",
        "processed_count", "stored_tuple_count",
        "sink_count", "first_rec_t", "last_rec_t",
        "process_ctx",
    )

    def __init__(self, app, worker_id: int, node_id: int, wf_node_id: str, role: str, state):
        self.app = app
        self.ref = WorkerRef(node_id, worker_id, role)
        self.wf_node_id = wf_node_id
        self.node_id = node_id
        self.role = role
        self.state = state
        self.mailbox: deque = deque()
        self.lock = threading.Lock()
        self.scheduled = False
        self.active = False
        self.sender_id = worker_id
        self._seq = 0
        self.local_sends = 0
        self.remote_sends = 0
        self.link_counts: dict = {}
        self.delivered: dict = {}
        self.processed_count = 0
        self.stored_tuple_count = 0
        self.sink_count = 0
        self.first_rec_t: Optional[float] = None
        self.last_rec_t: Optional[float] = None
        self.process_ctx = None

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq


class _DriverEntity:
    """Sender identity for activity outside workers (feeds, deploy, flush)."""

    __slots__ = ("sender_id", "node_id", "_seq", "local_sends", "remote_sends",
                 "link_counts", "delivered")

    def __init__(self, sender_id: int, node_id: int):
        self.sender_id = sender_id
        self.node_id = node_id
        self._seq = 0
        self.local_sends = 0
        self.remote_sends = 0
        self.link_counts: dict = {}
        self.delivered: dict = {}

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq


# --- hook contexts -------------------------------------------------------


class _BaseContext:
    """What every hook can reach: its workflow node, callbacks, seeded RNG."""

    __slots__ = ("app", "wf_node_id", "node_id", "_entity")

    def __init__(self, app: "Application", wf_node_id: str, node_id: int, entity):
        self.app = app
        self.wf_node_id = wf_node_id
        self.node_id = node_id
        self._entity = entity

    @property
    def node_count(self) -> int:
        return self.app.config.node_count

    @property
    def operation(self):
        return self.app.workflow.nodes[self.wf_node_id].operation

    @property
    def args(self):
        return self.app.workflow.nodes[self.wf_node_id].args

    @property
    def rng(self) -> _LockedRandom:
        return self.app._route_rng(self.wf_node_id, self.node_id)

    def call(self, name: str, state=None, args=(), in_port=None) -> CallbackResult:
        op = self.operation
        if name in op.work_callbacks:
            self.app._occupy()
        try:
            return invoke_callback(op, name, state=state, args=args, in_port=in_port)
        except CallbackFailed as exc:
            exc.node = self.wf_node_id
            raise

    def initial_state(self):
        return self.app._clone_initial_state(self.wf_node_id)

    def send(self, ref: WorkerRef, message) -> None:
        self.app._send(self._entity, ref, message)

    def emit(self, emit_map) -> None:
        self.app._emit(self.wf_node_id, emit_map, self._entity, self.node_id)


class _SpawnMixin:
    """Worker creation and per-node execution, shared by deploy and process."""

    __slots__ = ()

    def local_worker(self, state, role: str) -> WorkerRef:
        return self.app._spawn(self.node_id, self.wf_node_id, role, state)

    def remote_worker(self, state, role: str) -> WorkerRef:
        node = self.app._pick_remote_node(self.node_id)
        return self.app._spawn(node, self.wf_node_id, role, state)

    def worker_on(self, node_id: int, state, role: str) -> WorkerRef:
        return self.app._spawn(node_id, self.wf_node_id, role, state)

    def on(self, node_id: int, fn: Callable):
        if not 0 <= node_id < self.app.config.node_count:
            raise UnknownNode(f"no such node: {node_id}")
        return fn(self._scoped_to(node_id))

    def on_n(self, n: int, fn: Callable) -> dict:
        if n > self.app.config.node_count:
            raise UnknownNode(f"asked for {n} nodes, cluster has {self.app.config.node_count}")
        nodes = sorted(self.app._placement_rng.sample(range(self.app.config.node_count), n))
        return {nid: fn(self._scoped_to(nid)) for nid in nodes}

    def on_all_nodes(self, fn: Callable) -> dict:
        return {nid: fn(self._scoped_to(nid)) for nid in range(self.app.config.node_count)}

    def _scoped_to(self, node_id: int):
        return self.__class__(self.app, self.wf_node_id, node_id, self._entity)


class DeployContext(_BaseContext, _SpawnMixin):
    """Hook context during deployment. Deployment data is not readable yet."""

    __slots__ = ()


class DeliverContext(_BaseContext):
    """Hook context for deliver: read-only besides send/emit."""

    __slots__ = ()

    @property
    def deployment(self):
        return self.app._deployment_of(self.wf_node_id)


class ProcessContext(_BaseContext, _SpawnMixin):
    """Hook context for a worker's processing turn."""

    __slots__ = ("worker",)

    def __init__(self, app, wf_node_id, node_id, entity, worker=None):
        super().__init__(app, wf_node_id, node_id, entity)
        self.worker = worker if worker is not None else entity

    @property
    def deployment(self):
        return self.app._deployment_of(self.wf_node_id)

    def self_ref(self) -> WorkerRef:
        return self.worker.ref

    def add_stored(self, n: int = 1) -> None:
        self.worker.stored_tuple_count += n

    def _scoped_to(self, node_id: int):
        return ProcessContext(self.app, self.wf_node_id, node_id, self._entity, self.worker)


class FlushContext(_BaseContext, _SpawnMixin):
    """Hook context for the quiescence flush phase."""

    __slots__ = ()

    @property
    def deployment(self):
        return self.app._deployment_of(self.wf_node_id)


class _NodeRuntime:
    __slots__ = ("node", "deployment", "is_sink", "out_links")

    def __init__(self, node, is_sink: bool, out_links: dict):
        self.node = node
        self.deployment = None
        self.is_sink = is_sink
        self.out_links = out_links  # port -> tuple of Links


# --- executors -----------------------------------------------------------


class _DeterministicExecutor:
    """Runs every runnable worker on the driver thread, FIFO round-robin."""

    def __init__(self, app: "Application"):
        self.app = app
        self.queue: deque = deque()

    def submit(self, worker: _Worker) -> None:
        self.queue.append(worker)

    def drain(self, deadline: Optional[float] = None) -> None:
        app = self.app
        queue = self.queue
        steps = 0
        while queue:
            worker = queue.popleft()
            app._process_one(worker)
            with worker.lock:
                if worker.mailbox and app._failed is None:
                    queue.append(worker)
                else:
                    worker.scheduled = False
            app._done_one()
            steps += 1
            if deadline is not None and steps % 256 == 0 and time.perf_counter() > deadline:
                raise QuiescenceTimeout(app._snapshot())

    def start(self):
        pass

    def stop(self):
        self.queue.clear()


class _NodeExecutor:
    """Thread pool of one logical node."""

    def __init__(self, app: "Application", node_id: int, n_threads: int):
        self.app = app
        self.node_id = node_id
        self.queue: deque = deque()
        self.cond = threading.Condition()
        self.stopping = False
        self.threads = [
            threading.Thread(
                target=self._loop, name=f"node{node_id}-exec{i}", daemon=True
            )
            for i in range(n_threads)
        ]

    def start(self):
        for t in self.threads:
            t.start()

    def submit(self, worker: _Worker) -> None:
        with self.cond:
            self.queue.append(worker)
            self.cond.notify()

    def stop(self):
        with self.cond:
            self.stopping = True
            self.cond.notify_all()
        for t in self.threads:
            if t.ident is not None:
                t.join(timeout=5)

    def _loop(self):
        app = self.app
        while True:
            with self.cond:
                while not self.queue and not self.stopping:
                    self.cond.wait()
                if self.stopping:
                    return
                worker = self.queue.popleft()
            app._process_one(worker)
            with worker.lock:
                if worker.mailbox and app._failed is None:
                    with self.cond:
                        self.queue.append(worker)
                        self.cond.notify()
                else:
                    worker.scheduled = False
            app._done_one()


# --- metrics -------------------------------------------------------------


@dataclass(frozen=True)
class WorkerMetrics:
    ref: WorkerRef
    wf_node: str
    role: str
    processed_count: int
    stored_tuple_count: int


@dataclass(frozen=True)
class MetricsSnapshot:
    """Consistent counter snapshot, taken at quiescence."""

    workers: dict
    node_local_sends: dict
    node_remote_sends: dict
    delivered: dict
    link_counts: dict
    first_record_time: Optional[float]
    last_record_time: Optional[float]
    total_sink_records: int
    load_roles: dict

    def flat(self) -> dict:
        """Flat key/value export, as consumed by the bench module."""
        out = {
            "app.total_sink_records": self.total_sink_records,
            "app.first_record_time": self.first_record_time,
            "app.last_record_time": self.last_record_time,
        }
        for nid in sorted(self.node_local_sends):
            out[f"node.{nid}.local_sends"] = self.node_local_sends[nid]
            out[f"node.{nid}.remote_sends"] = self.node_remote_sends[nid]
        for wid in sorted(self.workers):
            wm = self.workers[wid]
            prefix = f"worker.{wid}"
            out[f"{prefix}.node"] = wm.ref.node_id
            out[f"{prefix}.wf_node"] = wm.wf_node
            out[f"{prefix}.role"] = wm.role
            out[f"{prefix}.processed"] = wm.processed_count
            out[f"{prefix}.stored"] = wm.stored_tuple_count
        return out

    def worker_group(self, wf_node: Optional[str] = None, role: Optional[str] = None) -> list:
        """Workers filtered by workflow node and role.

        With a node but no role, the node's strategy-designated load-bearing
        roles are used (all roles when the strategy designates none).
        """
        selected = []
        for wm in self.workers.values():
            if wf_node is not None and wm.wf_node != wf_node:
                continue
            if role is not None:
                if wm.role != role:
                    continue
            elif wf_node is not None:
                roles = self.load_roles.get(wf_node) or ()
                if roles and wm.role not in roles:
                    continue
            selected.append(wm)
        return selected

    def remote_sends(self) -> int:
        return sum(self.node_remote_sends.values())

    def stored_tuples(self, wf_node: Optional[str] = None) -> int:
        return sum(
            wm.stored_tuple_count
            for wm in self.workers.values()
            if wf_node is None or wm.wf_node == wf_node
        )


def compute_throughput(metrics: MetricsSnapshot) -> float:
    """Sink records per second over the first-to-last record window."""
    if metrics.total_sink_records == 0:
        raise ZeroRecords("no records reached a sink")
    elapsed = (metrics.last_record_time or 0.0) - (metrics.first_record_time or 0.0)
    if elapsed <= 0:
        raise ZeroElapsed("first and last sink records coincide")
    return metrics.total_sink_records / elapsed


def imbalance(metrics: MetricsSnapshot, wf_node: Optional[str] = None, role: Optional[str] = None) -> float:
    """Max over mean of per-worker processed counts in the designated group."""
    group = metrics.worker_group(wf_node, role)
    if not group:
        raise ZeroRecords("no workers in the designated group")
    counts = [wm.processed_count for wm in group]
    mean = sum(counts) / len(counts)
    if mean == 0:
        raise ZeroRecords("designated group processed nothing")
    return max(counts) / mean


# --- application ---------------------------------------------------------


class Application:
    """A deployed workflow running on the simulated cluster."""

    def __init__(self, workflow: Workflow, config: ClusterConfig):
        self.workflow = workflow
        self.config = config
        self.trace: list = []
        self._workers: dict = {}
        self._worker_seq = 0
        self._driver_entities: list = []
        self._entity_lock = threading.Lock()
        self._pending = 0
        self._active_feeders = 0
        self._idle = threading.Condition()
        self._failed: Optional[BaseException] = None
        self._started = False
        self._closed = False
        self._next_feed_node = 0
        self._placement_rng = _LockedRandom(Random(f"{config.seed}|placement"))
        self._route_rngs: dict = {}
        self._route_lock = threading.Lock()

        self._runtime_nodes = {}
        for nid, node in workflow.nodes.items():
            out_links = {}
            for port in node.operation.out_port_names():
                out_links[port] = workflow.out_links(nid, port)
            self._runtime_nodes[nid] = _NodeRuntime(
                node, is_sink=not node.operation.out_ports, out_links=out_links
            )

        if config.deterministic:
            self._executor = _DeterministicExecutor(self)
            self._node_executors = None
        else:
            self._executor = None
            self._node_executors = [
                _NodeExecutor(self, nid, config.executor_threads_per_node)
                for nid in range(config.node_count)
            ]

    # -- lifecycle --

    def _deploy(self) -> None:
        order = topological_order(self.workflow)
        # Sinks deploy first so every downstream deliver target exists before
        # an upstream hook can emit.
        for nid in reversed(order):
            entity = self._new_driver_entity(node_id=0)
            ctx = DeployContext(self, nid, 0, entity)
            node = self.workflow.nodes[nid]
            try:
                data = node.strategy.deploy(ctx)
            except Exception as exc:
                raise DeployHookFailed(nid, exc) from exc
            self._runtime_nodes[nid].deployment = data
            log.debug("deployed %s via %s", nid, node.strategy.name)
        self._deploy_digest = self.deployment_digest()

    def _start(self) -> None:
        if self._node_executors:
            for ex in self._node_executors:
                ex.start()
        self._started = True

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._node_executors:
            for ex in self._node_executors:
                ex.stop()
        else:
            self._executor.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # -- internals used by contexts --

    def _new_driver_entity(self, node_id: int) -> _DriverEntity:
        with self._entity_lock:
            self._worker_seq += 1
            entity = _DriverEntity(-self._worker_seq, node_id)
        self._driver_entities.append(entity)
        return entity

    def _clone_initial_state(self, wf_node_id: str):
        return copy.deepcopy(self.workflow.nodes[wf_node_id].operation.initial_state)

    def _route_rng(self, wf_node_id: str, node_id: int) -> _LockedRandom:
        key = (wf_node_id, node_id)
        rng = self._route_rngs.get(key)
        if rng is None:
            with self._route_lock:
                rng = self._route_rngs.get(key)
                if rng is None:
                    rng = _LockedRandom(
                        Random(f"{self.config.seed}|route|{wf_node_id}|{node_id}")
                    )
                    self._route_rngs[key] = rng
        return rng

    def _pick_remote_node(self, current: int) -> int:
        n = self.config.node_count
        if n == 1:
            return current
        pick = self._placement_rng.randrange(n - 1)
        return pick if pick < current else pick + 1

    def _spawn(self, node_id: int, wf_node_id: str, role: str, state) -> WorkerRef:
        if not 0 <= node_id < self.config.node_count:
            raise UnknownNode(f"no such node: {node_id}")
        with self._entity_lock:
            self._worker_seq += 1
            worker = _Worker(self, self._worker_seq, node_id, wf_node_id, role, state)
            self._workers[worker.ref.worker_id] = worker
        worker.process_ctx = ProcessContext(self, wf_node_id, node_id, worker)
        return worker.ref

    def _send(self, entity, ref: WorkerRef, message) -> None:
        worker = self._workers.get(ref.worker_id)
        if worker is None or worker.ref != ref:
            raise InvalidWorkerRef(f"unknown worker ref {ref}")
        if worker.node_id == entity.node_id:
            entity.local_sends += 1
        else:
            entity.remote_sends += 1
        if self.config.trace:
            self.trace.append(("send", entity.sender_id, ref.worker_id, message))
        with self._idle:
            self._pending += 1
        with worker.lock:
            worker.mailbox.append(message)
            if not worker.scheduled:
                worker.scheduled = True
                self._submit(worker)

    def _submit(self, worker: _Worker) -> None:
        if self._node_executors:
            self._node_executors[worker.node_id].submit(worker)
        else:
            self._executor.submit(worker)

    def _emit(self, wf_node_id: str, emit_map, entity, at_node: int) -> None:
        nr = self._runtime_nodes[wf_node_id]
        declared = nr.node.operation.out_port_names()
        for port in emit_map:
            if port not in declared:
                raise UnknownOutPort(f"node {wf_node_id!r} has no out-port {port!r}")
        for port in declared:
            payloads = emit_map.get(port)
            if not payloads:
                continue
            links = nr.out_links.get(port, ())
            if not links:
                continue
            for payload in payloads:
                for link in links:
                    record = DataRecord(
                        payload,
                        in_port=link.in_port,
                        seq=(entity.sender_id, entity.next_seq()),
                    )
                    entity.link_counts[link] = entity.link_counts.get(link, 0) + 1
                    self._deliver(link.dst, record, entity, at_node)

    def _deliver(self, dst_wf_node: str, record: DataRecord, entity, at_node: int) -> None:
        key = (dst_wf_node, record.in_port)
        entity.delivered[key] = entity.delivered.get(key, 0) + 1
        ctx = DeliverContext(self, dst_wf_node, at_node, entity)
        self._runtime_nodes[dst_wf_node].node.strategy.deliver(record, ctx)

    def _deployment_of(self, wf_node_id: str):
        return self._runtime_nodes[wf_node_id].deployment

    def _occupy(self) -> None:
        # Sleeping occupies this executor thread for the duration, modeling
        # one core being busy; a spin loop would serialize the whole cluster
        # on the interpreter lock.
        duration = self.config.simulated_work
        if duration > 0:
            time.sleep(duration)

    def _process_one(self, worker: _Worker) -> None:
        with worker.lock:
            message = worker.mailbox.popleft()
        if self._failed is not None:
            return
        nr = self._runtime_nodes[worker.wf_node_id]
        if type(message) is DataRecord:
            # The first-to-last record window spans every record processing,
            # so aggregate-and-flush runs measure the whole run rather than
            # the final burst into the sink.
            now = time.perf_counter()
            if worker.first_rec_t is None:
                worker.first_rec_t = now
            worker.last_rec_t = now
            if nr.is_sink:
                worker.sink_count += 1
        if worker.active:
            self._fail(ProcessHookFailed(worker.ref, RuntimeError("worker entered twice")))
            return
        worker.active = True
        try:
            new_state = nr.node.strategy.process(
                message, worker.state, worker.role, worker.process_ctx
            )
            worker.state = new_state
            worker.processed_count += 1
        except BaseException as exc:
            self._fail(ProcessHookFailed(worker.ref, exc))
        finally:
            worker.active = False

    def _done_one(self) -> None:
        with self._idle:
            self._pending -= 1
            if self._pending == 0:
                self._idle.notify_all()

    def _fail(self, exc: BaseException) -> None:
        with self._idle:
            if self._failed is None:
                self._failed = exc
            self._idle.notify_all()

    # -- public API --

    def feed(self, source_id: str, payloads: Iterable, rate: Optional[float] = None,
             block: bool = True):
        """Inject ``payloads`` into a source node, optionally rate-limited.

        With ``block=False`` the feed runs on its own thread and the returned
        handle's ``join()`` waits for it; ``await_quiescence`` also waits for
        all outstanding feeds.
        """
        node = self.workflow.nodes.get(source_id)
        if node is None:
            raise UnknownNode(f"no workflow node {source_id!r}")
        if node.operation.in_ports:
            raise NodeHasInPorts(f"node {source_id!r} is not a source")
        feed_node = self._next_feed_node % self.config.node_count
        self._next_feed_node += 1
        entity = self._new_driver_entity(feed_node)

        def run():
            interval = (1.0 / rate) if rate else None
            start = time.perf_counter()
            for i, payload in enumerate(payloads):
                if self._failed is not None:
                    break
                if interval is not None:
                    target = start + i * interval
                    delay = target - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                record = DataRecord(
                    payload, in_port=None, seq=(entity.sender_id, entity.next_seq())
                )
                self._deliver(source_id, record, entity, feed_node)

        if block:
            run()
            return None
        with self._idle:
            self._active_feeders += 1

        def run_and_finish():
            try:
                run()
            finally:
                with self._idle:
                    self._active_feeders -= 1
                    self._idle.notify_all()

        t = threading.Thread(target=run_and_finish, name=f"feed-{source_id}", daemon=True)
        t.start()
        return t

    def _wait_idle(self, deadline: Optional[float]) -> None:
        if self.config.deterministic:
            while True:
                self._executor.drain(deadline)
                with self._idle:
                    if self._failed or (self._pending == 0 and self._active_feeders == 0):
                        break
                if deadline is not None and time.perf_counter() > deadline:
                    raise QuiescenceTimeout(self._snapshot())
                time.sleep(0.001)  # a background feeder is still injecting
        else:
            with self._idle:
                while self._failed is None and (self._pending > 0 or self._active_feeders > 0):
                    remaining = None
                    if deadline is not None:
                        remaining = deadline - time.perf_counter()
                        if remaining <= 0:
                            break
                    self._idle.wait(timeout=min(remaining, 0.2) if remaining else 0.2)
            if self._failed is None and (self._pending > 0 or self._active_feeders > 0):
                raise QuiescenceTimeout(self._snapshot())
        if self._failed is not None:
            raise self._failed

    def await_quiescence(self, timeout: Optional[float] = None) -> MetricsSnapshot:
        """Wait until every mailbox is empty and no hook runs, then run each
        strategy's flush phase, wait again, and return the final metrics."""
        deadline = time.perf_counter() + timeout if timeout is not None else None
        self._wait_idle(deadline)
        for nid in topological_order(self.workflow):
            strategy = self.workflow.nodes[nid].strategy
            if strategy.flush is None:
                continue
            entity = self._new_driver_entity(node_id=0)
            strategy.flush(FlushContext(self, nid, 0, entity))
            self._wait_idle(deadline)
        return self._snapshot()

    def _snapshot(self) -> MetricsSnapshot:
        workers = {}
        node_local = {nid: 0 for nid in range(self.config.node_count)}
        node_remote = {nid: 0 for nid in range(self.config.node_count)}
        delivered: dict = {}
        link_counts: dict = {}
        first_t = None
        last_t = None
        total_sinks = 0
        for worker in list(self._workers.values()):
            workers[worker.ref.worker_id] = WorkerMetrics(
                ref=worker.ref,
                wf_node=worker.wf_node_id,
                role=worker.role,
                processed_count=worker.processed_count,
                stored_tuple_count=worker.stored_tuple_count,
            )
            node_local[worker.node_id] += worker.local_sends
            node_remote[worker.node_id] += worker.remote_sends
            total_sinks += worker.sink_count
            if worker.first_rec_t is not None:
                first_t = worker.first_rec_t if first_t is None else min(first_t, worker.first_rec_t)
            if worker.last_rec_t is not None:
                last_t = worker.last_rec_t if last_t is None else max(last_t, worker.last_rec_t)
            for k, v in worker.delivered.items():
                delivered[k] = delivered.get(k, 0) + v
            for k, v in worker.link_counts.items():
                link_counts[k] = link_counts.get(k, 0) + v
        for entity in list(self._driver_entities):
            node_local[entity.node_id] += entity.local_sends
            node_remote[entity.node_id] += entity.remote_sends
            for k, v in entity.delivered.items():
                delivered[k] = delivered.get(k, 0) + v
            for k, v in entity.link_counts.items():
                link_counts[k] = link_counts.get(k, 0) + v
        load_roles = {
            nid: self.workflow.nodes[nid].strategy.load_roles for nid in self.workflow.nodes
        }
        return MetricsSnapshot(
            workers=workers,
            node_local_sends=node_local,
            node_remote_sends=node_remote,
            delivered=delivered,
            link_counts=link_counts,
            first_record_time=first_t,
            last_record_time=last_t,
            total_sink_records=total_sinks,
            load_roles=load_roles,
        )

    def deployment_digest(self) -> str:
        """SHA-256 over the pickled deployment data of every node."""
        blob = pickle.dumps(
            {nid: nr.deployment for nid, nr in sorted(self._runtime_nodes.items())},
            protocol=4,
        )
        return hashlib.sha256(blob).hexdigest()

    def worker_refs(self, wf_node: Optional[str] = None, role: Optional[str] = None) -> list:
        return [
            w.ref
            for w in self._workers.values()
            if (wf_node is None or w.wf_node_id == wf_node)
            and (role is None or w.role == role)
        ]

    def worker_state(self, ref: WorkerRef):
        """Read a worker's state (test instrumentation; use at quiescence)."""
        return self._workers[ref.worker_id].state


def deploy_application(workflow: Workflow, config: ClusterConfig) -> Application:
    """Validate ``workflow``, run every deploy hook (sinks first), and start
    the executors. Returns the running application handle."""
    validate_workflow(workflow)
    app = Application(workflow, config)
    try:
        app._deploy()
    except DeployHookFailed:
        app.close()
        raise
    app._start()
    return app

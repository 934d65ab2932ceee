"""Stream processing with pluggable distribution strategies.

Data-processing operations and the distribution strategies deploying them
over a (simulated) cluster are separate values, combined per node when a
workflow is built. Swapping how an operation is distributed is a one-argument
change to the workflow.
"""

from .core import (
    CallbackContext,
    CallbackFailed,
    CallbackResult,
    Chain,
    DataRecord,
    InvalidWorkflow,
    Link,
    MetadataMissing,
    NodeSpec,
    OperationDef,
    Port,
    StrategyDef,
    StreamloomError,
    UnknownCallback,
    UnknownOutPort,
    Workflow,
    WorkflowBuildError,
    WorkflowBuilder,
    WorkflowNode,
    build_workflow,
    invoke_callback,
    operation,
    record_port,
    topological_order,
    validate_workflow,
    workflow_errors,
)
from .hashing import hash_key, key_bytes, murmur3_32
from .runtime import (
    Application,
    ClusterConfig,
    ConfigError,
    DeployHookFailed,
    InvalidWorkerRef,
    MetricsSnapshot,
    NodeHasInPorts,
    ProcessHookFailed,
    QuiescenceTimeout,
    UnknownNode,
    WorkerRef,
    ZeroElapsed,
    ZeroRecords,
    compute_throughput,
    deploy_application,
    imbalance,
)
from .sketch import SpaceSavingSketch
from .strategies import (
    SplitStrategyConfig,
    d_choices_strategy,
    keyed_state_strategy,
    pkg_strategy,
    shuffle_strategy,
    stateless_per_node_strategy,
    strategy_by_name,
    w_choices_strategy,
)
from .join import (
    BicliqueConfig,
    JoinStage,
    MatrixConfig,
    cascade_join_workflow,
    join_biclique_contrand_strategy,
    join_biclique_strategy,
    join_matrix_strategy,
    join_operation,
    join_strategy_by_name,
    query_join_workflow,
)

__all__ = [name for name in dir() if not name.startswith("_")]

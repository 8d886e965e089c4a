"""macroflow: event-ordered macroscopic traffic simulation and re-routing."""

from .errors import (
    DuplicateRouteError,
    DuplicateTraversalError,
    InternalInvariantError,
    MacroflowError,
    NetworkFormatError,
    OptimizeAborted,
    QueryFormatError,
    RoutingError,
    ScenarioError,
    SimulationError,
    StoreError,
    TraversalNotFoundError,
    UnknownEdgeError,
    UnknownRouteError,
)
from .flowstore import FlowTimeline, Route, RouteStore, Traversal
from .latency import (
    BprLatency,
    LatencyModel,
    LatencyTable,
    TabulatedLatency,
    bpr_travel_time,
    materialize,
    table_lookup,
)
from .network import EdgeAttributes, RoadNetwork, load_network, network_to_csv
from .optimize import (
    IterationMetrics,
    OptimizeResult,
    OptimizerConfig,
    congested_edges,
    initial_assignment,
    optimize,
    select_for_reroute,
)
from .routing import (
    Query,
    StaticPathCache,
    route_travel_time,
    shortest_path_static,
    shortest_path_traffic,
)
from .scenarios import ScenarioSpec, generate, load_queries, queries_to_csv
from .simulation import (
    SimulationResult,
    UpdateReport,
    delete_routes,
    insert_routes,
    insert_routes_batch_parallel,
    propagate,
    recompute_edge,
    reroute,
    reroute_batch,
    simulate_full,
    update_batch,
)
from .version import __version__

__all__ = [
    "BprLatency",
    "DuplicateRouteError",
    "DuplicateTraversalError",
    "EdgeAttributes",
    "FlowTimeline",
    "InternalInvariantError",
    "IterationMetrics",
    "LatencyModel",
    "LatencyTable",
    "MacroflowError",
    "NetworkFormatError",
    "OptimizeAborted",
    "OptimizeResult",
    "OptimizerConfig",
    "Query",
    "QueryFormatError",
    "RoadNetwork",
    "Route",
    "RouteStore",
    "RoutingError",
    "ScenarioError",
    "ScenarioSpec",
    "SimulationError",
    "SimulationResult",
    "StaticPathCache",
    "StoreError",
    "TabulatedLatency",
    "Traversal",
    "TraversalNotFoundError",
    "UnknownEdgeError",
    "UnknownRouteError",
    "UpdateReport",
    "__version__",
    "bpr_travel_time",
    "congested_edges",
    "delete_routes",
    "generate",
    "initial_assignment",
    "insert_routes",
    "insert_routes_batch_parallel",
    "load_network",
    "load_queries",
    "materialize",
    "network_to_csv",
    "optimize",
    "propagate",
    "queries_to_csv",
    "recompute_edge",
    "reroute",
    "reroute_batch",
    "route_travel_time",
    "select_for_reroute",
    "shortest_path_static",
    "shortest_path_traffic",
    "simulate_full",
    "table_lookup",
    "update_batch",
]

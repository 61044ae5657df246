"""Road networks, flow statistics, route sampling and semantic view graphs."""
from .network import (
    NetworkFormatError,
    NetworkValidationError,
    RoadNetwork,
    Trajectory,
    load_network,
    load_trajectories,
    save_network,
    save_trajectories,
    validate_network,
)
from .routes import all_shortest_lengths, sample_routes, segment_graph, shortest_lengths_from, shortest_route, within_hops
from .stats import TransitionStats, build_transition_stats, trajectory_from_route, transitions_from_counts
from .views import (
    ViewGraph,
    build_distance_graph,
    build_entropy_graph,
    build_view_graphs,
    candidate_pairs,
    load_view_graph,
    normalize_columns,
    save_view_graph,
    sparsify_knn,
)

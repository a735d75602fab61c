"""Personalized route recommendation with learned search costs.

A road-network search engine whose path cost and remaining-cost estimate are
both learned: a recurrent model with two attention stages scores observed
prefixes, and a context-conditioned graph-attention value model estimates
the discounted cost to the destination, trained by n-step bootstrapping.
"""

from .data import Dataset, Query, Trajectory, bucket, load_dataset, make_query, save_dataset, split_dataset, synth_generate
from .embeddings import ModelConfig, distance_bin, time_indices
from .metrics import Report, edit_distance, evaluate, prf, write_report_csv
from .model import Model, load_checkpoint, save_checkpoint
from .network import RoadNetwork, euclid, grid_network, load_network, neighbors, save_network
from .prefix_cost import HistoryBank, MovingState, encode_prefix, g_cost, rnn_loss, transition_probs
from .search import Diagnostics, SearchBudgetError, SearchConfig, Searcher, UnreachableError, astar, recommend
from .training import TrainConfig, immediate_cost, td_target, train, value_loss
from .value_net import build_edge_index, h_estimate, node_representations

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Query", "Trajectory", "bucket", "load_dataset", "make_query",
    "save_dataset", "split_dataset", "synth_generate",
    "ModelConfig", "distance_bin", "time_indices",
    "Report", "edit_distance", "evaluate", "prf", "write_report_csv",
    "Model", "load_checkpoint", "save_checkpoint",
    "RoadNetwork", "euclid", "grid_network", "load_network", "neighbors", "save_network",
    "HistoryBank", "MovingState", "encode_prefix", "g_cost", "rnn_loss", "transition_probs",
    "Diagnostics", "SearchBudgetError", "SearchConfig", "Searcher", "UnreachableError",
    "astar", "recommend",
    "TrainConfig", "immediate_cost", "td_target", "train", "value_loss",
    "build_edge_index", "h_estimate", "node_representations",
    "__version__",
]

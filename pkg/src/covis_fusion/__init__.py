__version__ = "0.1.0"

from .alignment import AlignResult, align_views, icp_baseline, pair_icp
from .codec import FrameMessage, deserialize_frame, serialize_frame
from .covis_net import MatchResult, RmNetParams, build_graph, classify_edges, load_params, message_pass, save_params, train
from .geometry import Point2, Pose2, compose, inverse, kabsch2, rre, rte
from .pipeline import EvalReport, FusionResult, evaluate_dataset, run_pipeline
from .scene import generate_scene, simulate_pair
from .separation import fit_stationary_sinusoid, separate_frame
from .utils.config import FusionConfig, load_config
from .utils.types import ScenarioSpec

__all__ = [
    "AlignResult", "align_views", "icp_baseline", "pair_icp",
    "FrameMessage", "serialize_frame", "deserialize_frame",
    "MatchResult", "RmNetParams", "build_graph", "message_pass", "classify_edges", "train",
    "save_params", "load_params",
    "Point2", "Pose2", "compose", "inverse", "kabsch2", "rre", "rte",
    "EvalReport", "FusionResult", "run_pipeline", "evaluate_dataset",
    "generate_scene", "simulate_pair",
    "fit_stationary_sinusoid", "separate_frame",
    "FusionConfig", "load_config", "ScenarioSpec",
]

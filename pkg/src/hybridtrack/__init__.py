"""Hybrid RGB/event single-object tracker with sparse-coding adapters between an ANN and an SNN branch."""

from .eventsim import BoundingBox, EventStream, SceneSpec, events_to_frames, render_scene, simulate_events
from .ista import TDA, IstaAdapter, ista_reference_solve, soft_threshold
from .tracker import HybridTracker, TrackerConfig, load_checkpoint, save_checkpoint, track_sequence

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "EventStream", "SceneSpec", "events_to_frames", "render_scene", "simulate_events",
    "TDA", "IstaAdapter", "ista_reference_solve", "soft_threshold",
    "HybridTracker", "TrackerConfig", "load_checkpoint", "save_checkpoint", "track_sequence",
]

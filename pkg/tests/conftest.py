import numpy as np
import pytest
import torch

from hybridtrack.eventsim import SceneSpec
from hybridtrack.tracker import TrackerConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Two 16-px patches per side: 2x2 template grid, 4x4 search grid."""
    return TrackerConfig(template_size=32, search_size=64, embed_dim=16, latent_dim=8, heads=2,
                         head_channels=8, ann_depth=3, snn_depth=2, adapter_layers=2)


@pytest.fixture
def small_scene():
    return SceneSpec(height=64, width=80, n_frames=6, target_size=(12.0, 10.0),
                     target_start=(30.0, 30.0), target_velocity=(2.0, 0.0), target_color=(0.95, 0.9, 0.85),
                     background_seed=3, seed=5)


def tracker_inputs(cfg: TrackerConfig, batch: int = 2, seed: int = 0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    t, zs, xs = cfg.time_steps, cfg.template_size, cfg.search_size
    return (torch.randn(batch, 3, zs, zs, generator=g, dtype=dtype),
            torch.randn(batch, 3, xs, xs, generator=g, dtype=dtype),
            torch.rand(batch, t, 3, zs, zs, generator=g, dtype=dtype) * 3,
            torch.rand(batch, t, 3, xs, xs, generator=g, dtype=dtype) * 3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

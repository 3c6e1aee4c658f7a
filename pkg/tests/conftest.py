import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from railpath.annotations import EgoPathAnnotation
from railpath.geometry import Polyline
from railpath.synthetic import SceneConfig, generate_synthetic_scene


def straight_annotation(image_id="straight", width=640, height=360,
                        center=320.4, gauge=120.0, y_bottom=349.6, y_top=130.2):
    """Hand-built straight vertical track, non-integer coords by default."""
    ys = np.linspace(y_bottom, y_top, 12)
    left = np.column_stack([np.full_like(ys, center - gauge / 2), ys])
    right = np.column_stack([np.full_like(ys, center + gauge / 2), ys])
    return EgoPathAnnotation(image_id=image_id, left_rail=Polyline(left),
                             right_rail=Polyline(right), image_width=width, image_height=height)


@pytest.fixture(scope="session")
def scene():
    rng = np.random.default_rng(11)
    return generate_synthetic_scene(rng, SceneConfig(), image_id="fixture_scene")


@pytest.fixture(scope="session")
def multitrack_scene():
    rng = np.random.default_rng(5)
    cfg = SceneConfig(track_count=[3, 3], clutter=0.4)
    return generate_synthetic_scene(rng, cfg, image_id="fixture_multitrack")

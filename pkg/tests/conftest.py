import numpy as np
import pytest

from lsr.data import SyntheticFaceConfig, render_face
from lsr.features import FeatureConfig


def small_feature_config(**overrides):
    """Cheap descriptor config for fast tests."""
    base = dict(patch_size=9, hog_cells=2, hog_bins=4, ring_radii=(2.0, 3.5),
                points_per_ring=4, comparison_pairs=16)
    base.update(overrides)
    return FeatureConfig(**base)


@pytest.fixture(scope="session")
def small_faces():
    """60 synthetic faces rendered once per session."""
    cfg = SyntheticFaceConfig(count=1, rng_seed=42)
    return [render_face(cfg, i) for i in range(60)]


@pytest.fixture(scope="session")
def feat_cfg():
    return small_feature_config()


def random_shape(rng, n=10, scale=10.0):
    return rng.normal(size=(n, 2)) * scale


ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)

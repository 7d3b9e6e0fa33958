import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sitar.core_types import DatasetManifest, ManifestRecord, VideoRef  # noqa: E402
from sitar.datasets import SyntheticSpec, VideoBank, generate_synthetic  # noqa: E402


def make_manifest(n=10, C=5, prefix="v"):
    recs = [ManifestRecord(VideoRef(f"{prefix}{i}", f"/nowhere/{prefix}{i}", 16), i % C) for i in range(n)]
    return DatasetManifest(recs, C)


@pytest.fixture(scope="session")
def tiny_synthetic(tmp_path_factory):
    """8 directions x 3 videos, 16 frames of 64x64."""
    out = tmp_path_factory.mktemp("synthetic")
    manifest = generate_synthetic(SyntheticSpec(videos_per_class=3, seed=7), out)
    return manifest, out


@pytest.fixture(scope="session")
def tiny_bank(tiny_synthetic):
    return VideoBank().preload(tiny_synthetic[0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])

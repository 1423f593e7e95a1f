from pathlib import Path
import sys

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from cfevid.geometry import Clip, read_cfvr  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
VECTORS = Path(__file__).parent / "vectors"
NATURAL = sorted(FIXTURES.glob("nat_*.cfvr"))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_clip(rng: np.random.Generator, frames: int, height: int, width: int) -> Clip:
    return Clip(rng.integers(0, 256, (frames, height, width, 3), dtype=np.uint8))


@st.composite
def clips(draw, max_frames=3, sizes=(16, 32, 48)):
    f = draw(st.integers(1, max_frames))
    h = draw(st.sampled_from(sizes))
    w = draw(st.sampled_from(sizes))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_clip(np.random.default_rng(seed), f, h, w)


seeds64 = st.integers(0, 2**64 - 1)


@pytest.fixture(scope="session")
def natural_clips():
    return {p.stem: read_cfvr(p) for p in NATURAL}


@pytest.fixture(scope="session")
def attack_frames():
    return read_cfvr(FIXTURES / "attack_frames.cfvr")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)

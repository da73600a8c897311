import numpy as np
import pytest

from proxyplan.gridworld import MazeTask


def maze(*rows: str, seed: int = 0) -> MazeTask:
    """Task from a picture; rows are top to bottom, 'G' marks the goal."""
    y = next(i for i, r in enumerate(rows) if "G" in r)
    x = rows[y].index("G")
    lava = sum(r.count("L") for r in rows)
    cells = len(rows) * len(rows[0])
    return MazeTask(len(rows[0]), len(rows), tuple(rows), (x, y), lava / cells, seed)


# three small hand-built mazes shared across test modules
CORRIDOR = maze(
    "....",
    ".LL.",
    "....",
    "G...",
)
GAP_WALL = maze(
    "..L..",
    "..L..",
    ".....",
    "..L..",
    "G.L..",
)
POCKET = maze(
    ".....",
    ".LLL.",
    ".L.L.",
    ".LLL.",
    "G....",
)
FIXTURES = {"corridor": CORRIDOR, "gap_wall": GAP_WALL, "pocket": POCKET}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(FIXTURES))
def fixture_task(request):
    return FIXTURES[request.param]

import numpy as np
import pytest

from highlightnet.synthetic import dark_image
from highlightnet.trainer import TrainConfig, train

DESK_SEEDS = (0, 1, 2, 3)
DESK = dict(epochs=200, batch_size=4, learning_rate=1e-3, resize=64, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_images():
    return [dark_image(s) for s in DESK_SEEDS]


@pytest.fixture(scope="session")
def desk_runs(desk_images):
    """The three 200-step runs shared by the training and acceptance tests."""
    import time

    t0 = time.perf_counter()
    full = train(TrainConfig(**DESK), images=desk_images)
    elapsed = time.perf_counter() - t0
    repeat = train(TrainConfig(**DESK), images=desk_images)
    ablated = train(TrainConfig(**DESK, use_st=False, use_ldan=False), images=desk_images)
    return {"full": full, "repeat": repeat, "ablated": ablated, "seconds": elapsed}

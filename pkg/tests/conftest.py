import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from causalad.config import Hyperparams
from causalad.data import SampleWindow


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def tiny_hp() -> Hyperparams:
    return Hyperparams(
        window=4,
        embed_dim=5,
        top_k=2,
        causal_threshold=0.06,
        batch_size=8,
        max_epochs=3,
        patience=2,
        seed=0,
    )


def random_window(rng: np.random.Generator, n: int, width: int, m: int = 1) -> SampleWindow:
    return SampleWindow(
        history=rng.standard_normal((width, n, m)),
        target=rng.standard_normal((n, m)),
        t=width,
    )

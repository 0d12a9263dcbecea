import json
from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def zero_noise_truth() -> np.ndarray:
    raw = json.loads((FIXTURES / "zero_noise_truth.json").read_text())
    return np.asarray(raw["X0"], dtype=np.float64)


def random_spd(rng: np.random.Generator, k: int, floor: float = 0.5) -> np.ndarray:
    W = rng.standard_normal((k, k))
    return W @ W.T + (floor + k) * np.eye(k)

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mbcrnet.data import preprocess_records  # noqa: E402
from mbcrnet.synth import SynthConfig, generate  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_small():
    """40 preprocessed records, 20 per class."""
    records = generate(SynthConfig(seed=7, n_records=40, abnormality="lead_localized_inversion"))
    ids, X, y, rejected = preprocess_records(records)
    assert not rejected
    return ids, X, y

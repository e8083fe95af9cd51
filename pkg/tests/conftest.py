import numpy as np
import pytest

from bubblesheet.evolution import FieldNoiseSpec, SolverConfig, run_ancient
from bubblesheet.grid import GridSpec
from bubblesheet.riccati import QUANTIZED_VALUE

DEFAULT_GRID = GridSpec(hermite_order=24, fourier_modes=8)


@pytest.fixture(scope="session")
def flagship_record():
    """Backward rank-one field run over three decades, shared across tests."""
    cfg = SolverConfig(grid=DEFAULT_GRID, direction="backward", sigma_step=0.05, gamma=0.5)
    noise = FieldNoiseSpec(amplitude_h=100.0**-1.25, seed=7, sup_cap=0.3 / 100.0)
    return run_ancient(
        cfg,
        (QUANTIZED_VALUE, 0.0),
        np.pi / 6,
        noise,
        (-1e5, -100.0),
        metadata={"experiment": "test-fixture"},
    )

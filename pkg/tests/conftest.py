import numpy as np
import pytest

from perceploco.terrain import TerrainSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def fields():
    """One generated heightfield per terrain family with medium-difficulty parameters."""
    specs = {
        "flat": TerrainSpec("flat"),
        "stairs": TerrainSpec("stairs_up", rise=0.15, tread=0.30),
        "stairs_down": TerrainSpec("stairs_down", rise=0.15, tread=0.30),
        "gap": TerrainSpec("gap", gap_width=0.5),
        "platform": TerrainSpec("platform", platform_height=0.3),
    }
    return {name: generate(spec) for name, spec in specs.items()}

import numpy as np
import pytest

from dampid import dataset as ds


@pytest.fixture(scope="session")
def base_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("data_base")
    return ds.generate_dataset(out, extended=False, master_seed=7)


@pytest.fixture(scope="session")
def base_store(base_manifest):
    return ds.TrajectoryStore(base_manifest)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)

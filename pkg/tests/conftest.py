import numpy as np
import pytest

from app.models import Network
from app.services.cohort_service import write_cohort
from app.services.synth_service import gen_two_class_cohort


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def six_network_cohort():
    """Two subjects per class, all six networks, short series."""
    return gen_two_class_cohort(separation=1.0, subjects_per_class=2, n_timepoints=24, seed=11)


@pytest.fixture(scope="session")
def cerebellum_cohort():
    return gen_two_class_cohort(
        separation=1.0, subjects_per_class=6, n_timepoints=48, networks=(Network.CEREBELLUM,), seed=5
    )


@pytest.fixture
def cohort_dir(tmp_path, six_network_cohort):
    root = tmp_path / "cohort"
    manifest = write_cohort(six_network_cohort, root)
    return root, manifest


@pytest.fixture
def cerebellum_dir(tmp_path, cerebellum_cohort):
    root = tmp_path / "cerebellum"
    manifest = write_cohort(cerebellum_cohort, root)
    return root, manifest

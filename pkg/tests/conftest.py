import numpy as np
import pytest

from lineup_forge import pipeline
from lineup_forge.simulate import Y_PROBES, SimConfig, default_perturbations, inject_mixups, simulate_dataset

# 300 animals keeps the full pipeline at a few seconds while leaving the
# eQTL panel informative enough for DNA alignment.
MEDIUM = dict(n_samples=300, n_noise=200)


@pytest.fixture(scope="session")
def clean():
    """Unperturbed medium dataset and its genotype truth."""
    return simulate_dataset(SimConfig(seed=11, **MEDIUM))


@pytest.fixture(scope="session")
def perturbed(clean):
    ds, _ = clean
    perts = default_perturbations(ds, 11, dna_swaps=4, dna_duplicates=1, shift_length=4, expr_swaps=1)
    pds, truth = inject_mixups(ds, perts)
    return pds, truth, perts


@pytest.fixture(scope="session")
def perturbed_run(perturbed):
    pds, truth, _ = perturbed
    return pipeline.run_all(pds, y_probes=Y_PROBES)


@pytest.fixture(scope="session")
def clean_run(clean):
    ds, _ = clean
    return pipeline.run_all(ds, y_probes=Y_PROBES, traits=[])


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)

import numpy as np
import pytest

from kglogic.backends import Backend, EmbeddingTable
from kglogic.kg import SyntheticConfig, generate_synthetic
from kglogic.pretrain import TrainHyper, train_embeddings
from kglogic.sampling import sample_benchmark


def random_table(kind: str, dim: int, entities: int, relations: int,
                 seed: int = 0, unit_entities: bool = False) -> EmbeddingTable:
    """Random embedding table for tests that need no trained structure."""
    rng = np.random.default_rng(seed)
    backend = Backend(kind, dim=dim)
    entity = rng.normal(size=(entities, dim))
    if unit_entities:
        entity /= np.linalg.norm(entity, axis=1, keepdims=True)
    if kind == "rotate":
        relation = rng.uniform(-np.pi, np.pi, size=(relations, backend.relation_size))
    else:
        relation = rng.normal(size=(relations, backend.relation_size))
    return EmbeddingTable(backend, entity, relation)


@pytest.fixture(scope="session")
def toy_split():
    """The 50-entity / 0.1-dropout synthetic benchmark graph."""
    return generate_synthetic(SyntheticConfig(50, 5, 500, 0.1), seed=7)


@pytest.fixture(scope="session")
def memorized_table(toy_split):
    """ComplEx d=64 trained to memorization on the observed graph."""
    backend = Backend("complex", dim=64)
    return train_embeddings(toy_split, backend, TrainHyper(lr=0.05, epochs=200, seed=1))


@pytest.fixture(scope="session")
def toy_benchmark(toy_split):
    """30 instances per catalog type on the toy split."""
    return sample_benchmark(toy_split, count_per_type=30, seed=11)

import numpy as np
import pytest

from conformal_crew import (
    AnnotationTable,
    ClassifierOutputs,
    build_pool,
)
from conformal_crew.synthetic import (
    annotations_from_pool,
    exchangeable_outputs,
    uniform_confusion,
)


@pytest.fixture(scope="session")
def small_outputs() -> ClassifierOutputs:
    rng = np.random.default_rng(42)
    return exchangeable_outputs(300, 4, rng)


@pytest.fixture(scope="session")
def small_pool():
    return build_pool(uniform_confusion(4, 0.8), 3)


@pytest.fixture(scope="session")
def small_annotations(small_outputs, small_pool) -> AnnotationTable:
    rng = np.random.default_rng(43)
    return annotations_from_pool(small_outputs, small_pool, rng, rounds=2)

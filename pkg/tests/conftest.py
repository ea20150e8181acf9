"""
Configuración de pytest y fixtures comunes para las pruebas.
"""

import numpy as np
import pytest

from src.services.atlas_service import atlas_service
from src.services.connectome_service import AdjacencyMatrix
from src.services.metrics_service import metrics_service
from src.services.synth_service import make_synth_config, synth_service
from src.utils.error_handler import reset_error_handler
from tests.factories import FOUR_LEAF_TEXT, TWO_LEAF_TEXT, random_counts


@pytest.fixture(autouse=True)
def clean_state():
    """Manejador de errores y métricas limpios en cada prueba."""
    reset_error_handler()
    metrics_service.clear_metrics()
    yield
    reset_error_handler()
    metrics_service.clear_metrics()


@pytest.fixture
def two_leaf_hierarchy():
    """Raíz con dos hojas (p = 2)."""
    return atlas_service.parse_hierarchy(TWO_LEAF_TEXT)


@pytest.fixture
def four_leaf_hierarchy():
    """root → {u: {a, b}, v: {c, d}} con ROIs 0..3."""
    return atlas_service.parse_hierarchy(FOUR_LEAF_TEXT)


@pytest.fixture(scope="session")
def dk_hierarchy():
    """Jerarquía Desikan-Killiany empaquetada."""
    return atlas_service.default_hierarchy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def four_leaf_matrix():
    """Matriz de ejemplo sobre la jerarquía de cuatro hojas."""
    counts = np.array([
        [2, 3, 1, 0],
        [3, 1, 4, 2],
        [1, 4, 0, 5],
        [0, 2, 5, 3],
    ])
    return AdjacencyMatrix(subject_id="s1", counts=counts)


@pytest.fixture
def dk_matrix(dk_hierarchy):
    """Matriz entera aleatoria (0..20) sobre el atlas DK."""
    return AdjacencyMatrix(subject_id="dk", counts=random_counts(np.random.default_rng(7), dk_hierarchy.p, 20))


@pytest.fixture
def small_synth_config(four_leaf_hierarchy):
    """Cohorte sintética pequeña con señal en la raíz para trait_00."""
    return make_synth_config(
        n=60,
        hierarchy=four_leaf_hierarchy,
        n_traits=3,
        base_rate=15.0,
        signal_nodes={0: {"trait_00": 1.0}},
        trait_noise_sd=0.5,
        missing_fraction={"trait_02": 0.05},
        seed=3,
    )


@pytest.fixture
def small_synth_cohort(small_synth_config):
    return synth_service.generate_cohort(small_synth_config, threads=1)

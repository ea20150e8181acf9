"""
Pruebas unitarias para el servicio de métricas de etapas.
"""

import pytest

from src.services.metrics_service import MetricsService


@pytest.mark.unit
class TestMetricsService:
    """Pruebas de registro y exportación de métricas."""

    @pytest.fixture
    def metrics(self):
        return MetricsService()

    def test_record_success_and_failure(self, metrics):
        """Prueba conteos, tasa de éxito y tiempos acumulados."""
        metrics.record_stage("cca", success=True, elapsed=0.5)
        metrics.record_stage("cca", success=False, elapsed=0.25)
        result = metrics.get_stage_metrics("cca")
        assert result["calls"] == 2
        assert result["failures"] == 1
        assert result["success_rate"] == 50.0
        assert result["total_elapsed_seconds"] == 0.75
        assert result["last_elapsed_seconds"] == 0.25

    def test_unknown_stage(self, metrics):
        """Prueba una etapa sin registros."""
        result = metrics.get_stage_metrics("nada")
        assert result["calls"] == 0
        assert result["success_rate"] == 0.0

    def test_export_sorted(self, metrics):
        """Prueba que la exportación sigue el orden alfabético."""
        metrics.record_stage("tree", success=True, elapsed=0.1)
        metrics.record_stage("atlas", success=True, elapsed=0.1)
        assert list(metrics.export()) == ["atlas", "tree"]

    def test_clear(self, metrics):
        """Prueba el borrado de métricas."""
        metrics.record_stage("tree", success=True, elapsed=0.1)
        metrics.clear_metrics()
        assert metrics.export() == {}

"""
Sistema centralizado de métricas de execução.
Coleta tempos e resultados de cada etapa para o manifesto de execução.
"""

import logging
import threading
from typing import Dict, Any, Optional
from datetime import datetime
from dataclasses import dataclass

logger = logging.getLogger(__name__)


@dataclass
class StageMetrics:
    """Métricas de uma etapa específica."""
    stage: str
    calls: int = 0
    failures: int = 0
    total_elapsed: float = 0.0
    last_elapsed: float = 0.0
    last_success: Optional[datetime] = None
    last_failure: Optional[datetime] = None

    def success_rate(self) -> float:
        """Calcula taxa de sucesso."""
        if self.calls == 0:
            return 0.0
        return ((self.calls - self.failures) / self.calls) * 100


class MetricsService:
    """Serviço centralizado de métricas de etapas."""

    def __init__(self):
        self.metrics: Dict[str, StageMetrics] = {}
        self._lock = threading.Lock()

    def record_stage(self, stage: str, success: bool, elapsed: float):
        """Registra a execução de uma etapa."""
        with self._lock:
            metrics = self.metrics.setdefault(stage, StageMetrics(stage=stage))
            metrics.calls += 1
            metrics.total_elapsed += elapsed
            metrics.last_elapsed = elapsed
            if success:
                metrics.last_success = datetime.now()
            else:
                metrics.failures += 1
                metrics.last_failure = datetime.now()

    def get_stage_metrics(self, stage: str) -> Dict[str, Any]:
        """Obtém métricas de uma etapa específica."""
        metrics = self.metrics.get(stage) or StageMetrics(stage=stage)
        return {
            "stage": stage,
            "calls": metrics.calls,
            "failures": metrics.failures,
            "success_rate": round(metrics.success_rate(), 2),
            "total_elapsed_seconds": round(metrics.total_elapsed, 6),
            "last_elapsed_seconds": round(metrics.last_elapsed, 6),
        }

    def export(self) -> Dict[str, Any]:
        """Exporta as métricas de todas as etapas (ordem alfabética)."""
        with self._lock:
            stages = sorted(self.metrics)
        return {stage: self.get_stage_metrics(stage) for stage in stages}

    def clear_metrics(self):
        """Limpa métricas."""
        with self._lock:
            self.metrics.clear()


# Instância global do serviço de métricas
metrics_service = MetricsService()

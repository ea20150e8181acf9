"""
Sistema centralizado de manejo de errores para las etapas del pipeline.
Proporciona la jerarquía de excepciones, logging estructurado y los códigos de salida del CLI.
"""

import logging
import time
from datetime import datetime
from enum import Enum
from typing import Any, Callable, Dict, Optional
from dataclasses import dataclass, field
from functools import wraps

import numpy as np

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_COMPUTATION = 2


class CTreeError(Exception):
    """Excepción base del toolkit."""
    exit_code: int = EXIT_COMPUTATION


class ValidationError(CTreeError):
    """Entradas inválidas: esquema, rangos, archivos inexistentes."""
    exit_code = EXIT_VALIDATION


class ComputationError(CTreeError):
    """Fallo numérico o de verificación durante el cálculo."""
    exit_code = EXIT_COMPUTATION


class ErrorSeverity(Enum):
    """Niveles de severidad para errores de etapa."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class ErrorType(Enum):
    """Tipos de errores de etapa."""
    VALIDATION_ERROR = "validation_error"
    IO_ERROR = "io_error"
    COMPUTATION_ERROR = "computation_error"
    UNKNOWN_ERROR = "unknown_error"


@dataclass
class StageError:
    """Estructura para representar un error de una etapa del pipeline."""
    stage: str
    error_type: ErrorType
    severity: ErrorSeverity
    message: str
    exception_class: str = ""
    timestamp: datetime = field(default_factory=datetime.now)
    context: Dict[str, Any] = field(default_factory=dict)


class PipelineErrorHandler:
    """Manejador centralizado de errores de las etapas."""

    def classify_error(self, exception: Exception, stage: str) -> StageError:
        """
        Clasifica un error y determina su tipo y severidad.

        Args:
            exception: La excepción capturada
            stage: Nombre de la etapa que falló

        Returns:
            StageError clasificado
        """
        error_type = ErrorType.UNKNOWN_ERROR
        severity = ErrorSeverity.HIGH

        if isinstance(exception, ValidationError):
            error_type = ErrorType.VALIDATION_ERROR
            severity = ErrorSeverity.LOW
        elif isinstance(exception, (FileNotFoundError, PermissionError, IsADirectoryError)):
            error_type = ErrorType.IO_ERROR
            severity = ErrorSeverity.LOW
        elif isinstance(exception, ComputationError):
            error_type = ErrorType.COMPUTATION_ERROR
            severity = ErrorSeverity.HIGH
        elif isinstance(exception, (np.linalg.LinAlgError, FloatingPointError, ArithmeticError)):
            error_type = ErrorType.COMPUTATION_ERROR
            severity = ErrorSeverity.HIGH
        elif isinstance(exception, OSError):
            error_type = ErrorType.IO_ERROR
            severity = ErrorSeverity.MEDIUM
        elif isinstance(exception, (ValueError, KeyError)):
            error_type = ErrorType.VALIDATION_ERROR
            severity = ErrorSeverity.LOW

        # Errores no clasificados son críticos: suelen indicar un bug
        if error_type == ErrorType.UNKNOWN_ERROR:
            severity = ErrorSeverity.CRITICAL

        return StageError(
            stage=stage,
            error_type=error_type,
            severity=severity,
            message=str(exception),
            exception_class=type(exception).__name__,
        )

    def exit_code_for(self, error: StageError) -> int:
        """
        Traduce un error clasificado al código de salida del CLI.

        Args:
            error: El error clasificado

        Returns:
            1 para errores de validación o de archivos, 2 para el resto
        """
        if error.error_type in (ErrorType.VALIDATION_ERROR, ErrorType.IO_ERROR):
            return EXIT_VALIDATION
        return EXIT_COMPUTATION

    def log_error(self, error: StageError, context: Optional[Dict[str, Any]] = None) -> None:
        """
        Registra un error en los logs con el nivel apropiado.

        Args:
            error: El error a registrar
            context: Contexto adicional
        """
        if context:
            error.context.update(context)

        log_data = {
            "stage": error.stage,
            "error_type": error.error_type.value,
            "severity": error.severity.value,
            "error_message": error.message,
            "exception_class": error.exception_class,
            "timestamp": error.timestamp.isoformat(),
            "context": error.context,
        }

        if error.severity == ErrorSeverity.CRITICAL:
            logger.critical(f"Error en etapa {error.stage}: {error.message}", extra=log_data)
        elif error.severity == ErrorSeverity.HIGH:
            logger.error(f"Error en etapa {error.stage}: {error.message}", extra=log_data)
        elif error.severity == ErrorSeverity.MEDIUM:
            logger.warning(f"Error en etapa {error.stage}: {error.message}", extra=log_data)
        else:
            logger.info(f"Error en etapa {error.stage}: {error.message}", extra=log_data)


def with_error_handling(stage: str, context: Optional[Dict[str, Any]] = None):
    """
    Decorador que mide, registra y clasifica los errores de una etapa.

    La excepción original se relanza siempre; el llamador decide el código de salida.

    Args:
        stage: Nombre de la etapa
        context: Contexto adicional para logging
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            error_handler = get_error_handler()
            metrics = _get_metrics_service()
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                elapsed = time.perf_counter() - start_time
                metrics.record_stage(stage, success=False, elapsed=elapsed)
                error = error_handler.classify_error(e, stage)
                error_handler.log_error(error, {**(context or {}), "elapsed_seconds": elapsed})
                raise
            elapsed = time.perf_counter() - start_time
            metrics.record_stage(stage, success=True, elapsed=elapsed)
            logger.debug(f"Etapa {stage} completada", extra={"stage": stage, "elapsed_seconds": elapsed})
            return result
        return wrapper
    return decorator


def _get_metrics_service():
    """Import diferido para evitar dependencias circulares."""
    from src.services.metrics_service import metrics_service
    return metrics_service


# Instancia global del manejador de errores
_error_handler: Optional[PipelineErrorHandler] = None


def get_error_handler() -> PipelineErrorHandler:
    """Obtiene la instancia global del manejador de errores."""
    global _error_handler
    if _error_handler is None:
        _error_handler = PipelineErrorHandler()
    return _error_handler


def reset_error_handler() -> None:
    """Resetea el manejador de errores (útil para tests)."""
    global _error_handler
    _error_handler = None

"""
Módulo de configuración del toolkit de árboles de conectoma.
"""
from .settings import settings, Settings

__all__ = ["settings", "Settings"]

"""
Dependencias compartidas por rutas y servicios.

Resuelve la configuración efectiva (hilos, jerarquía por defecto) y ofrece el
mapa paralelo determinista que usan todas las etapas por sujeto o por nodo.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, Optional, TypeVar

from src.config import Settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(override: Optional[int] = None) -> int:
    """
    Número de hilos efectivo: flag --threads > CTREE_THREADS > 1.

    Args:
        override: Valor explícito (flag del CLI)

    Returns:
        int: Hilos a usar (>= 1)
    """
    return Settings.get_threads(override)


def get_hierarchy(path: Optional[Path | str] = None):
    """
    Dependencia para obtener una jerarquía (la empaquetada si no se indica ruta).

    Args:
        path: Ruta a un archivo de jerarquía

    Returns:
        AtlasHierarchy validada
    """
    from src.services.atlas_service import atlas_service

    if path is None:
        return atlas_service.default_hierarchy()
    return atlas_service.load_hierarchy(path)


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """
    Aplica func a cada elemento preservando el orden de entrada.

    Con un hilo se ejecuta en serie; el resultado es idéntico para cualquier
    número de hilos porque cada tarea es independiente y el merge sigue el
    orden de entrada.

    Args:
        func: Función pura por elemento
        items: Elementos de entrada
        threads: Hilos máximos (None = resolver desde el entorno)

    Returns:
        Lista de resultados en el orden de items
    """
    items = list(items)
    workers = min(resolve_threads(threads), max(len(items), 1))
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))

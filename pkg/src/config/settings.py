"""
Configuración y carga de variables de entorno para el toolkit de árboles de conectoma.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Cargar variables de entorno desde .env
load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parents[2]


class Settings:
    """Configuración centralizada del toolkit."""

    # Logging
    LOG_LEVEL: str = os.getenv("CTREE_LOG_LEVEL", "INFO")
    LOG_FORMAT: str = os.getenv("CTREE_LOG_FORMAT", "json")

    # Paralelismo (CTREE_THREADS se relee en cada llamada, ver get_threads)
    DEFAULT_THREADS: int = 1

    # Oráculo de homología
    ORACLE_CELL_BUDGET: int = int(os.getenv("CTREE_ORACLE_CELL_BUDGET", "100000"))

    # Parámetros de análisis
    DEFAULT_K: int = 23
    DEFAULT_FOLDS: int = 5
    DEFAULT_REPEATS: int = 10
    DEFAULT_SEED: int = 0
    MISSING_THRESHOLD: float = 0.10
    CCA_RIDGE: float = 1e-8
    EIGEN_FLOOR: float = 1e-10
    BMA_THRESHOLD: float = 0.75
    BMA_MAX_FEATURES: int = 25
    BMA_DRAWS: int = 10_000
    BMA_RETAINED_MODELS: int = 4096
    TOP_CONNECTIONS: int = 50
    GP_STARTS: int = 16
    GP_MAX_EVALS: int = 200

    # Datos empaquetados
    DEFAULT_HIERARCHY_PATH: Path = PROJECT_ROOT / "data" / "hierarchies" / "dk_hierarchy.csv"
    TEMPLATES_DIR: Path = PROJECT_ROOT / "src" / "templates"

    @classmethod
    def get_threads(cls, override: int | None = None) -> int:
        """
        Resuelve el número de hilos de trabajo.

        Args:
            override: Valor explícito (flag --threads); tiene prioridad

        Returns:
            Número de hilos (>= 1)
        """
        if override is not None:
            return max(1, int(override))
        raw = os.getenv("CTREE_THREADS", "")
        if raw.strip():
            try:
                return max(1, int(raw))
            except ValueError:
                return cls.DEFAULT_THREADS
        return cls.DEFAULT_THREADS

    @classmethod
    def validate(cls) -> list[str]:
        """
        Valida la configuración cargada del entorno.

        Returns:
            Lista de problemas (vacía si todo está correcto)
        """
        problems = []
        raw_threads = os.getenv("CTREE_THREADS", "")
        if raw_threads.strip():
            try:
                if int(raw_threads) < 1:
                    problems.append("CTREE_THREADS debe ser >= 1")
            except ValueError:
                problems.append(f"CTREE_THREADS no es un entero: {raw_threads!r}")
        if cls.ORACLE_CELL_BUDGET <= 0:
            problems.append("CTREE_ORACLE_CELL_BUDGET debe ser positivo")
        if cls.LOG_FORMAT not in ("json", "text"):
            problems.append(f"CTREE_LOG_FORMAT desconocido: {cls.LOG_FORMAT!r}")
        return problems


# Instancia global de configuración
settings = Settings()

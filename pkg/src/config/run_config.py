"""
Configuración validada de una ejecución del CLI.
"""
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from src.config.settings import settings
from src.utils.error_handler import ValidationError


class RunConfigError(ValidationError):
    """Configuración de ejecución inválida o rutas inexistentes."""
    pass


class RunConfig(BaseModel):
    """Subcomando, rutas y parámetros de una ejecución."""
    model_config = ConfigDict(frozen=True)

    subcommand: str
    inputs: Dict[str, Path] = Field(default_factory=dict)
    outputs: Dict[str, Path] = Field(default_factory=dict)
    K: int = Field(default=settings.DEFAULT_K, ge=1)
    folds: int = Field(default=settings.DEFAULT_FOLDS, ge=2)
    repeats: int = Field(default=settings.DEFAULT_REPEATS, ge=1)
    seed: int = settings.DEFAULT_SEED
    threshold: float = Field(default=settings.BMA_THRESHOLD, ge=0, le=1)
    missing_threshold: float = Field(default=settings.MISSING_THRESHOLD, gt=0, lt=1)
    threads: Optional[int] = Field(default=None, ge=1)

    def check_inputs(self) -> None:
        """
        Valida que todas las entradas existan antes de empezar el trabajo.

        Raises:
            RunConfigError: Con la lista de rutas problemáticas
        """
        problems: List[str] = []
        for name, path in sorted(self.inputs.items()):
            if not path.exists():
                problems.append(f"--{name.replace('_', '-')}: no existe {path}")
            elif path.is_dir():
                problems.append(f"--{name.replace('_', '-')}: {path} es un directorio")
        for name, path in sorted(self.outputs.items()):
            if path.exists() and path.is_dir() and name != "out_dir":
                problems.append(f"--{name.replace('_', '-')}: {path} es un directorio")
        if problems:
            raise RunConfigError("; ".join(problems))


def make_run_config(**kwargs) -> RunConfig:
    """
    Construye y valida un RunConfig.

    Las entradas None se descartan; las rutas se validan antes de devolver.

    Raises:
        RunConfigError: Parámetros fuera de rango o rutas inexistentes
    """
    kwargs["inputs"] = {k: Path(v) for k, v in (kwargs.get("inputs") or {}).items() if v is not None}
    kwargs["outputs"] = {k: Path(v) for k, v in (kwargs.get("outputs") or {}).items() if v is not None}
    try:
        config = RunConfig(**kwargs)
    except PydanticValidationError as e:
        errors = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise RunConfigError(f"parámetros inválidos: {errors}") from None
    config.check_inputs()
    return config

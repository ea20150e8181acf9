"""
Acceso al sistema de archivos del toolkit.

Este módulo fornece:
- Lectura de entradas con errores accionables (ruta inexistente, directorio, encoding)
- Escritura atómica de salidas de texto con saltos de línea normalizados
- Huellas SHA-256 de entradas y el manifiesto de ejecución `<salida>.manifest.json`
"""
import hashlib
import json
import logging
import os
import platform
import tempfile
from io import StringIO
from dataclasses import asdict, dataclass, field
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
import pytz

from src import __version__
from src.utils.error_handler import ValidationError

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"
TRACKED_PACKAGES = ("numpy", "scipy", "sympy", "pandas", "pydantic", "jinja2")


class FileStoreError(ValidationError):
    """Exceção personalizada para erros de leitura/escrita de arquivos."""
    pass


@dataclass
class RunManifest:
    """Manifiesto de una ejecución del CLI, escrito junto a cada salida."""
    subcommand: str
    argv: List[str]
    started_at: str
    seed: Optional[int] = None
    threads: int = 1
    inputs: Dict[str, str] = field(default_factory=dict)
    versions: Dict[str, str] = field(default_factory=dict)
    stages: Dict[str, Any] = field(default_factory=dict)
    exit_status: Optional[int] = None


class FileStore:
    """Leitura e escrita de artefatos do pipeline."""

    def read_text(self, path: Path | str) -> str:
        """
        Lee un archivo de texto UTF-8.

        Args:
            path: Ruta del archivo

        Returns:
            Contenido del archivo

        Raises:
            FileStoreError: Si el archivo no existe, es un directorio o no es UTF-8
        """
        path = Path(path)
        if not path.exists():
            raise FileStoreError(f"archivo inexistente: {path}")
        if path.is_dir():
            raise FileStoreError(f"se esperaba un archivo y {path} es un directorio")
        try:
            return path.read_text(encoding="utf-8")
        except UnicodeDecodeError as e:
            raise FileStoreError(f"{path} no es UTF-8 válido: {e}") from None

    def read_csv(self, path: Path | str, **kwargs) -> pd.DataFrame:
        """Lee un CSV con pandas validando antes la ruta."""
        text = self.read_text(path)
        try:
            return pd.read_csv(StringIO(text), **kwargs)
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise FileStoreError(f"CSV inválido en {path}: {e}") from None

    def write_text(self, path: Path | str, text: str) -> Path:
        """
        Escribe texto de forma atómica (archivo temporal + rename).

        Args:
            path: Ruta de destino (se crean los directorios padre)
            text: Contenido

        Returns:
            Ruta escrita
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(text)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
        logger.debug("Archivo escrito", extra={"path": str(path), "bytes": len(text.encode("utf-8"))})
        return path

    def write_csv(self, path: Path | str, frame: pd.DataFrame, index: bool = False) -> Path:
        """Escribe un DataFrame como CSV determinista."""
        return self.write_text(path, frame.to_csv(index=index, lineterminator="\n"))

    def sha256(self, path: Path | str) -> str:
        """Huella SHA-256 del contenido de un archivo."""
        digest = hashlib.sha256()
        with open(path, "rb") as handle:
            for chunk in iter(lambda: handle.read(65536), b""):
                digest.update(chunk)
        return digest.hexdigest()

    def fingerprint_inputs(self, paths: Dict[str, Path | str]) -> Dict[str, str]:
        """
        Huellas de las entradas de una ejecución.

        Args:
            paths: Nombre lógico -> ruta (se ignoran las rutas None)

        Returns:
            Nombre lógico -> "ruta sha256:<hex>"
        """
        result = {}
        for name, path in sorted(paths.items()):
            if path is None:
                continue
            path = Path(path)
            if path.is_file():
                result[name] = f"{path} sha256:{self.sha256(path)}"
            else:
                result[name] = str(path)
        return result

    def package_versions(self) -> Dict[str, str]:
        """Versiones de Python, del toolkit y de las dependencias numéricas."""
        versions = {"python": platform.python_version(), "ctree": __version__}
        for package in TRACKED_PACKAGES:
            try:
                versions[package] = metadata.version(package)
            except metadata.PackageNotFoundError:
                versions[package] = "unknown"
        return versions

    def new_manifest(self, subcommand: str, argv: List[str]) -> RunManifest:
        """Crea un manifiesto con la hora de inicio en UTC."""
        return RunManifest(
            subcommand=subcommand,
            argv=list(argv),
            started_at=datetime.now(pytz.UTC).isoformat(),
            versions=self.package_versions(),
        )

    def manifest_path(self, output: Path | str) -> Path:
        output = Path(output)
        return output.with_name(output.name + MANIFEST_SUFFIX)

    def write_manifest(self, output: Path | str, manifest: RunManifest) -> Path:
        """
        Escribe `<output>.manifest.json` junto a una salida.

        Args:
            output: Ruta de la salida (archivo o directorio)
            manifest: Manifiesto de la ejecución

        Returns:
            Ruta del manifiesto
        """
        text = json.dumps(asdict(manifest), indent=2, sort_keys=True, default=str) + "\n"
        return self.write_text(self.manifest_path(output), text)


# Instancia global do armazenamento de arquivos
file_store = FileStore()

"""
Módulo de integraciones con el sistema de archivos.
"""
from .file_store import FileStore, FileStoreError, file_store

__all__ = [
    "FileStore",
    "FileStoreError",
    "file_store"
]

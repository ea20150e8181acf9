"""
Configuración de logging estructurado para el CLI y los servicios.
"""
import logging
import sys

from pythonjsonlogger import jsonlogger

TEXT_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
JSON_FORMAT = '%(asctime)s %(levelname)s %(name)s %(message)s'

_HANDLER_NAME = "ctree"


def configure_logging(level: str = "INFO", fmt: str = "json") -> logging.Logger:
    """
    Instala un único handler en stderr para el logger raíz.

    Args:
        level: Nivel de log (DEBUG, INFO, ...)
        fmt: "json" (python-json-logger) o "text"

    Returns:
        Logger raíz configurado
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        if handler.get_name() == _HANDLER_NAME:
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.set_name(_HANDLER_NAME)
    if fmt == "json":
        handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(TEXT_FORMAT))

    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    return root

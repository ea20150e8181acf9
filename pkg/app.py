#!/usr/bin/env python3
"""
ctree - toolkit de árboles de conectoma.

Punto de entrada único del CLI. Cada subcomando se registra desde su módulo
de rutas; este módulo resuelve logging, traduce los errores a códigos de
salida y escribe el manifiesto de ejecución junto a cada salida.

Códigos de salida: 0 éxito, 1 error de validación o de archivos, 2 error de cálculo.
"""

import argparse
import logging
import sys
from typing import List, Optional

from src import __version__
from src.config import settings
from src.dependencies import resolve_threads
from src.integrations.file_store import file_store
from src.routes import analysis_routes, pipeline_routes, plot_routes, tree_routes
from src.services.metrics_service import metrics_service
from src.utils.error_handler import EXIT_OK, ValidationError, get_error_handler
from src.utils.logging_config import configure_logging

logger = logging.getLogger(__name__)

ROUTES = (tree_routes, analysis_routes, plot_routes, pipeline_routes)


class CTreeArgumentParser(argparse.ArgumentParser):
    """ArgumentParser que lanza ValidationError en lugar de terminar el proceso."""

    def error(self, message: str):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser() -> CTreeArgumentParser:
    """Parser con todos los subcomandos registrados."""
    parser = CTreeArgumentParser(prog="ctree", description="Toolkit de árboles de conectoma")
    parser.add_argument("--version", action="version", version=f"ctree {__version__}")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="Nivel de log")
    parser.add_argument(
        "--log-format", choices=("json", "text"),
        default=settings.LOG_FORMAT if settings.LOG_FORMAT in ("json", "text") else "json",
        help="Formato de log en stderr",
    )
    subparsers = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    subparsers.required = True
    for routes in ROUTES:
        routes.register(subparsers)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """
    Ejecuta un subcomando.

    Args:
        argv: Argumentos sin el nombre del programa (por defecto sys.argv[1:])

    Returns:
        Código de salida (0, 1 o 2)
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as e:
        sys.stderr.write(f"{e}\n")
        return e.exit_code
    except SystemExit as e:
        # --help y --version
        return int(e.code or 0)

    configure_logging(args.log_level, args.log_format)
    for problem in settings.validate():
        logger.warning(f"Configuración: {problem}")

    subcommand = args.subcommand if args.subcommand != "plot" else f"plot {args.kind}"
    manifest = file_store.new_manifest(subcommand, argv)
    manifest.threads = resolve_threads(getattr(args, "threads", None))
    metrics_service.clear_metrics()

    try:
        result = args.handler(args)
    except Exception as e:
        error_handler = get_error_handler()
        code = error_handler.exit_code_for(error_handler.classify_error(e, subcommand))
        logger.debug("Traza del error", exc_info=True)
        sys.stderr.write(f"ctree {subcommand}: {e}\n")
        return code

    manifest.seed = result.seed
    manifest.inputs = file_store.fingerprint_inputs(result.inputs)
    manifest.stages = metrics_service.export()
    manifest.exit_status = result.exit_status
    for output in result.outputs:
        file_store.write_manifest(output, manifest)
    if result.exit_status == EXIT_OK:
        logger.info(f"ctree {subcommand} completado", extra={"outputs": [str(p) for p in result.outputs]})
    return result.exit_status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

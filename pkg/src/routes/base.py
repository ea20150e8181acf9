"""
Piezas comunes de los subcomandos del CLI.
"""
import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from src.utils.error_handler import EXIT_OK


@dataclass
class CommandResult:
    """Salidas de un subcomando; app.py escribe un manifiesto junto a cada una."""
    outputs: List[Path]
    inputs: Dict[str, Optional[Path]] = field(default_factory=dict)
    seed: Optional[int] = None
    exit_status: int = EXIT_OK


def add_hierarchy_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-H", "--hierarchy", type=Path, default=None,
        help="CSV de jerarquía (por defecto la jerarquía DK empaquetada)",
    )


def add_threads_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads", type=int, default=None,
        help="Hilos máximos (por defecto CTREE_THREADS o 1)",
    )


def comma_list(text: str) -> List[str]:
    """Lista separada por comas, sin elementos vacíos."""
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise argparse.ArgumentTypeError("lista vacía")
    return items

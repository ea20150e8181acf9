"""
Subcomando plot: chord, tree y cca.
"""
import argparse
import logging
from pathlib import Path
from typing import List, Optional

from src.config.run_config import make_run_config
from src.dependencies import get_hierarchy
from src.integrations.file_store import file_store
from src.routes.base import CommandResult, add_hierarchy_argument
from src.services.atlas_service import AtlasHierarchy
from src.services.connectome_service import connectome_service
from src.services.report_service import report_service
from src.services.tree_service import ConnectomeTree, tree_service
from src.services.viz_service import viz_service
from src.utils.error_handler import ValidationError, with_error_handling

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    """Registra plot chord|tree|cca."""
    plot = subparsers.add_parser("plot", help="Figuras SVG deterministas")
    kinds = plot.add_subparsers(dest="kind", metavar="{chord,tree,cca}")
    kinds.required = True

    chord = kinds.add_parser("chord", help="Diagrama de cuerdas de un árbol")
    chord.add_argument("--in", dest="input", type=Path, required=True, help="CSV de árboles")
    chord.add_argument("--subject", default=None, help="Sujeto a dibujar (por defecto el árbol medio)")
    chord.add_argument("--out", type=Path, required=True, help="Archivo SVG")
    add_hierarchy_argument(chord)
    chord.set_defaults(handler=handle_chord)

    tree = kinds.add_parser("tree", help="Diagrama del árbol o diferencia porcentual")
    tree.add_argument("--in", dest="input", type=Path, required=True, help="CSV de árboles")
    tree.add_argument("--subject", default=None, help="Sujeto a dibujar (por defecto el árbol medio)")
    contrast = tree.add_mutually_exclusive_group()
    contrast.add_argument("--compare", type=Path, default=None, help="CSV de árboles de referencia")
    contrast.add_argument("--traits", type=Path, default=None, help="CSV de rasgos para contrastar extremos")
    tree.add_argument("--compare-subject", default=None, help="Sujeto de referencia en --compare")
    tree.add_argument("--trait", default=None, help="Rasgo del contraste (con --traits)")
    tree.add_argument("--fraction", type=float, default=0.10, help="Fracción de cada extremo")
    tree.add_argument("--include-leaves", action="store_true", help="Dibuja también las hojas")
    tree.add_argument("--out", type=Path, required=True, help="Archivo SVG")
    add_hierarchy_argument(tree)
    tree.set_defaults(handler=handle_tree)

    cca = kinds.add_parser("cca", help="Dispersión de rasgos por correlación canónica")
    cca.add_argument("--in", dest="input", type=Path, required=True, help="CSV de salida de cca")
    cca.add_argument("--desirability", type=Path, default=None, help="CSV trait,desirability")
    cca.add_argument("--out", type=Path, required=True, help="Archivo SVG")
    cca.set_defaults(handler=handle_cca_plot)


def _read_trees(path: Path, h: AtlasHierarchy) -> List[ConnectomeTree]:
    trees = tree_service.read_trees(file_store.read_text(path), h)
    if not trees:
        raise ValidationError(f"{path}: no contiene árboles")
    return trees


def _pick(trees: List[ConnectomeTree], subject: Optional[str]) -> ConnectomeTree:
    if subject is None:
        return trees[0] if len(trees) == 1 else tree_service.mean_tree(trees)
    for tree in trees:
        if tree.subject_id == subject:
            return tree
    raise ValidationError(f"sujeto inexistente: {subject!r}")


@with_error_handling("cli.plot.chord")
def handle_chord(args: argparse.Namespace) -> CommandResult:
    config = make_run_config(
        subcommand="plot chord", inputs={"in": args.input, "hierarchy": args.hierarchy}, outputs={"out": args.out}
    )
    h = get_hierarchy(args.hierarchy)
    tree = _pick(_read_trees(args.input, h), args.subject)
    output = file_store.write_text(args.out, viz_service.render_chord(tree))
    return CommandResult(outputs=[output], inputs=dict(config.inputs))


@with_error_handling("cli.plot.tree")
def handle_tree(args: argparse.Namespace) -> CommandResult:
    """
    Diagrama de un árbol; con --compare o --traits anota la diferencia porcentual.

    Con --traits se comparan los árboles medios de los extremos superior e inferior del rasgo.
    """
    config = make_run_config(
        subcommand="plot tree",
        inputs={"in": args.input, "compare": args.compare, "traits": args.traits, "hierarchy": args.hierarchy},
        outputs={"out": args.out},
    )
    h = get_hierarchy(args.hierarchy)
    trees = _read_trees(args.input, h)
    comparison = None
    if args.compare is not None:
        tree = _pick(trees, args.subject)
        comparison = _pick(_read_trees(args.compare, h), args.compare_subject)
    elif args.traits is not None:
        if args.trait is None:
            raise ValidationError("--traits requiere --trait")
        features = tree_service.trees_to_features(trees)
        _, traits = connectome_service.align_rows(features, connectome_service.load_traits(args.traits))
        tree, comparison = tree_service.contrast_groups(trees, traits.column(args.trait), args.fraction)
    else:
        tree = _pick(trees, args.subject)
    svg = viz_service.render_tree_diagram(tree, comparison=comparison, include_leaves=args.include_leaves)
    return CommandResult(outputs=[file_store.write_text(args.out, svg)], inputs=dict(config.inputs))


@with_error_handling("cli.plot.cca")
def handle_cca_plot(args: argparse.Namespace) -> CommandResult:
    config = make_run_config(
        subcommand="plot cca", inputs={"in": args.input, "desirability": args.desirability}, outputs={"out": args.out}
    )
    correlations, loadings, labels = report_service.cca_scatter_inputs(file_store.read_csv(args.input))
    desirability = None
    if args.desirability is not None:
        desirability = connectome_service.load_desirability(args.desirability)
    svg = viz_service.render_cca_scatter(correlations, loadings, labels, desirability)
    return CommandResult(outputs=[file_store.write_text(args.out, svg)], inputs=dict(config.inputs))

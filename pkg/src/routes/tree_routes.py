"""
Subcomandos de cohortes y árboles: synth, build y verify-theorem.
"""
import argparse
import logging
from pathlib import Path

from src.config.run_config import make_run_config
from src.dependencies import get_hierarchy
from src.integrations.file_store import file_store
from src.routes.base import CommandResult, add_hierarchy_argument, add_threads_argument
from src.services.connectome_service import connectome_service
from src.services.homology_service import HomologyService, homology_service
from src.services.report_service import report_service
from src.services.synth_service import synth_service
from src.services.tree_service import tree_service
from src.utils.error_handler import EXIT_COMPUTATION, ComputationError, with_error_handling

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    """Registra synth, build y verify-theorem."""
    synth = subparsers.add_parser("synth", help="Genera una cohorte sintética con señal plantada")
    synth.add_argument("--config", type=Path, required=True, help="CSV parameter,trait,node,value")
    synth.add_argument("--out-dir", type=Path, required=True, help="Directorio de salida")
    add_hierarchy_argument(synth)
    add_threads_argument(synth)
    synth.set_defaults(handler=handle_synth)

    build = subparsers.add_parser("build", help="Construye árboles de conectoma")
    source = build.add_mutually_exclusive_group(required=True)
    source.add_argument("-A", "--adjacency", type=Path, help="CSV de adyacencia de un sujeto")
    source.add_argument("--cohort", type=Path, help="Manifiesto subject_id,adjacency_path")
    build.add_argument("-o", "--out", type=Path, required=True, help="CSV de árboles")
    build.add_argument("--subject-id", default=None, help="Identificador del sujeto (por defecto el nombre del archivo)")
    build.add_argument("--real-valued", action="store_true", help="Conectividad ponderada (valores reales)")
    build.add_argument("--features-out", type=Path, default=None, help="CSV de características del árbol")
    build.add_argument("--am-features-out", type=Path, default=None, help="CSV de la matriz vectorizada")
    build.add_argument("--include-leaves", action="store_true", help="Incluye las hojas en --features-out")
    add_hierarchy_argument(build)
    add_threads_argument(build)
    build.set_defaults(handler=handle_build)

    verify = subparsers.add_parser("verify-theorem", help="Compara corango homológico y peso del árbol")
    verify.add_argument("--matrix", type=Path, required=True, help="CSV de adyacencia entera")
    verify.add_argument("--out", type=Path, required=True, help="Reporte node_name,weight,corank,match")
    verify.add_argument("--budget", type=int, default=None, help="Límite de celdas por nodo")
    add_hierarchy_argument(verify)
    add_threads_argument(verify)
    verify.set_defaults(handler=handle_verify)


@with_error_handling("cli.synth")
def handle_synth(args: argparse.Namespace) -> CommandResult:
    """
    Genera y escribe una cohorte sintética.

    Returns:
        CommandResult con manifiesto de cohorte, rasgos y verdad plantada
    """
    config = make_run_config(
        subcommand="synth",
        inputs={"config": args.config, "hierarchy": args.hierarchy},
        outputs={"out_dir": args.out_dir},
        threads=args.threads,
    )
    h = get_hierarchy(args.hierarchy)
    synth_config = synth_service.parse_synth_config(file_store.read_text(args.config), h)
    cohort = synth_service.generate_cohort(synth_config, config.threads)
    written = synth_service.write_cohort(args.out_dir, cohort)
    return CommandResult(outputs=list(written.values()), inputs=dict(config.inputs), seed=synth_config.seed)


@with_error_handling("cli.build")
def handle_build(args: argparse.Namespace) -> CommandResult:
    """
    Construye los árboles de un sujeto o de una cohorte y comprueba la conservación.

    Raises:
        ComputationError: Si un árbol no conserva las sumas de la matriz
    """
    config = make_run_config(
        subcommand="build",
        inputs={"adjacency": args.adjacency, "cohort": args.cohort, "hierarchy": args.hierarchy},
        outputs={"out": args.out, "features_out": args.features_out, "am_features_out": args.am_features_out},
        threads=args.threads,
    )
    h = get_hierarchy(args.hierarchy)
    if args.adjacency is not None:
        subject_id = args.subject_id or args.adjacency.stem
        cohort = [connectome_service.load_adjacency(file_store.read_text(args.adjacency), subject_id, args.real_valued)]
    else:
        cohort = connectome_service.load_cohort(args.cohort, args.real_valued, config.threads)

    trees = tree_service.build_cohort_trees(h, cohort, config.threads)
    for A, t in zip(cohort, trees):
        if not tree_service.conservation_check(h, A, t).ok:
            raise ComputationError(f"conservación violada para el sujeto {A.subject_id}")

    outputs = [tree_service.write_trees(args.out, trees)]
    if args.features_out is not None:
        features = tree_service.trees_to_features(trees, include_leaves=args.include_leaves)
        outputs.append(connectome_service.write_features(args.features_out, features))
    if args.am_features_out is not None:
        outputs.append(connectome_service.write_features(args.am_features_out, connectome_service.vectorize_upper(cohort)))
    logger.info("Árboles escritos", extra={"subjects": len(trees), "out": str(args.out)})
    return CommandResult(outputs=outputs, inputs=dict(config.inputs))


@with_error_handling("cli.verify-theorem")
def handle_verify(args: argparse.Namespace) -> CommandResult:
    """
    Verifica corango = peso en todos los nodos internos y escribe el reporte.

    Una discrepancia termina con código 2 después de escribir el reporte.
    """
    config = make_run_config(
        subcommand="verify-theorem",
        inputs={"matrix": args.matrix, "hierarchy": args.hierarchy},
        outputs={"out": args.out},
        threads=args.threads,
    )
    h = get_hierarchy(args.hierarchy)
    A = connectome_service.load_adjacency(file_store.read_text(args.matrix), args.matrix.stem)
    service = homology_service if args.budget is None else HomologyService(cell_budget=args.budget)
    rows = service.verify_theorem(h, A, config.threads)
    output = file_store.write_csv(args.out, report_service.verify_frame(rows))
    failures = [row.node_name for row in rows if not row.match]
    if failures:
        logger.error("El corango no coincide con el peso", extra={"nodes": failures})
        return CommandResult(outputs=[output], inputs=dict(config.inputs), exit_status=EXIT_COMPUTATION)
    return CommandResult(outputs=[output], inputs=dict(config.inputs))

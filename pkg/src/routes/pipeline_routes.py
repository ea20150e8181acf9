"""
Subcomando pipeline: análisis completo de extremo a extremo.
"""
import argparse
import logging
from pathlib import Path

from src.config import settings
from src.config.run_config import make_run_config
from src.routes.base import CommandResult, add_hierarchy_argument, add_threads_argument, comma_list
from src.services.pipeline_service import make_pipeline_options, pipeline_service
from src.services.regression_service import GPConfig, make_cv_config
from src.utils.error_handler import with_error_handling

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    """Registra pipeline."""
    pipeline = subparsers.add_parser("pipeline", help="Cohorte → árboles → CCA → CV → BMA → figuras → resumen")
    pipeline.add_argument("--synth-config", type=Path, default=None, help="CSV de cohorte sintética")
    pipeline.add_argument("--cohort", type=Path, default=None, help="Manifiesto subject_id,adjacency_path")
    pipeline.add_argument("--traits", type=Path, default=None, help="CSV de rasgos (con --cohort)")
    pipeline.add_argument("--desirability", type=Path, default=None, help="CSV trait,desirability")
    pipeline.add_argument("--out-dir", type=Path, default=Path("ctree_out"), help="Directorio de salida")
    pipeline.add_argument("--k", type=int, default=settings.DEFAULT_K)
    pipeline.add_argument("--folds", type=int, default=settings.DEFAULT_FOLDS)
    pipeline.add_argument("--repeats", type=int, default=settings.DEFAULT_REPEATS)
    pipeline.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    pipeline.add_argument("--regressors", type=comma_list, default=None, help="Subconjunto de baseline,linear,ridge,gp")
    pipeline.add_argument("--gp-starts", type=int, default=settings.GP_STARTS)
    pipeline.add_argument("--gp-max-evals", type=int, default=settings.GP_MAX_EVALS)
    pipeline.add_argument("--bma-traits", type=comma_list, default=None, help="Rasgos para BMA (por defecto los plantados)")
    pipeline.add_argument("--no-bma", action="store_true", help="Omite el promediado bayesiano")
    pipeline.add_argument("--threshold", type=float, default=settings.BMA_THRESHOLD)
    pipeline.add_argument("--top-connections", type=int, default=settings.TOP_CONNECTIONS)
    pipeline.add_argument("--missing-threshold", type=float, default=settings.MISSING_THRESHOLD)
    pipeline.add_argument("--contrast-fraction", type=float, default=0.10)
    pipeline.add_argument("--real-valued", action="store_true", help="Conectividad ponderada")
    add_hierarchy_argument(pipeline)
    add_threads_argument(pipeline)
    pipeline.set_defaults(handler=handle_pipeline)


@with_error_handling("cli.pipeline")
def handle_pipeline(args: argparse.Namespace) -> CommandResult:
    """Ejecuta el pipeline y devuelve todas las salidas escritas."""
    config = make_run_config(
        subcommand="pipeline",
        inputs={
            "synth_config": args.synth_config,
            "cohort": args.cohort,
            "traits": args.traits,
            "desirability": args.desirability,
            "hierarchy": args.hierarchy,
        },
        outputs={"out_dir": args.out_dir},
        K=args.k,
        folds=args.folds,
        repeats=args.repeats,
        seed=args.seed,
        threshold=args.threshold,
        missing_threshold=args.missing_threshold,
        threads=args.threads,
    )
    options = make_pipeline_options(
        out_dir=args.out_dir,
        hierarchy_path=args.hierarchy,
        synth_config_path=args.synth_config,
        cohort_manifest=args.cohort,
        traits_path=args.traits,
        desirability_path=args.desirability,
        K=config.K,
        cv=make_cv_config(folds=config.folds, repeats=config.repeats, seed=config.seed),
        gp=GPConfig(starts=args.gp_starts, max_evals=args.gp_max_evals),
        regressors=args.regressors,
        bma_traits=args.bma_traits,
        run_bma=not args.no_bma,
        threshold=config.threshold,
        missing_threshold=config.missing_threshold,
        top_connections=args.top_connections,
        contrast_fraction=args.contrast_fraction,
        real_valued=args.real_valued,
        threads=config.threads,
    )
    result = pipeline_service.run(options)
    return CommandResult(
        outputs=[
            path for name, path in sorted(result.paths.items())
            if not name.startswith("cohort_") or name == "cohort_manifest"
        ],
        inputs=dict(config.inputs),
        seed=config.seed,
    )

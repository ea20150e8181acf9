"""
Subcomandos de análisis: pca, cca, cv y bma.
"""
import argparse
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from src.config import settings
from src.config.run_config import make_run_config
from src.integrations.file_store import file_store
from src.routes.base import CommandResult, add_threads_argument, comma_list
from src.services.bma_service import bma_service
from src.services.connectome_service import FeatureMatrix, connectome_service
from src.services.regression_service import GPConfig, make_cv_config, regression_service, select_regressors
from src.services.report_service import report_service
from src.services.stats_service import PCAModel, stats_service
from src.utils.error_handler import ValidationError, with_error_handling

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    """Registra pca, cca, cv y bma."""
    pca = subparsers.add_parser("pca", help="PCA de una matriz de características")
    pca.add_argument("--features", type=Path, required=True, help="CSV subject_id,<características>")
    pca.add_argument("--k", type=int, default=settings.DEFAULT_K, help="Número de componentes")
    pca.add_argument("--out", type=Path, required=True, help="CSV de puntuaciones PC1..PCK")
    pca.set_defaults(handler=handle_pca)

    cca = subparsers.add_parser("cca", help="CCA de características contra rasgos")
    cca.add_argument("--features", type=Path, required=True, help="CSV de características")
    cca.add_argument("--traits", type=Path, required=True, help="CSV de rasgos")
    cca.add_argument("--out", type=Path, required=True, help="CSV table,row,column,value")
    cca.add_argument("--ridge", type=float, default=settings.CCA_RIDGE, help="Regularización ridge")
    cca.add_argument("--missing-threshold", type=float, default=settings.MISSING_THRESHOLD)
    cca.set_defaults(handler=handle_cca)

    cv = subparsers.add_parser("cv", help="Validación cruzada repetida de ambas representaciones")
    cv.add_argument("--features-tree", type=Path, required=True, help="CSV de características del árbol")
    cv.add_argument("--features-pca", type=Path, required=True, help="CSV de puntuaciones PCA")
    cv.add_argument("--traits", type=Path, required=True, help="CSV de rasgos")
    cv.add_argument("--folds", type=int, default=settings.DEFAULT_FOLDS)
    cv.add_argument("--repeats", type=int, default=settings.DEFAULT_REPEATS)
    cv.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    cv.add_argument("--out", type=Path, required=True, help="Reporte CSV")
    cv.add_argument("--regressors", type=comma_list, default=None, help="Subconjunto de baseline,linear,ridge,gp")
    cv.add_argument("--gp-starts", type=int, default=settings.GP_STARTS)
    cv.add_argument("--gp-max-evals", type=int, default=settings.GP_MAX_EVALS)
    cv.add_argument("--missing-threshold", type=float, default=settings.MISSING_THRESHOLD)
    add_threads_argument(cv)
    cv.set_defaults(handler=handle_cv)

    bma = subparsers.add_parser("bma", help="Promediado bayesiano de modelos para un rasgo")
    source = bma.add_mutually_exclusive_group(required=True)
    source.add_argument("--features", type=Path, help="CSV de características (p <= 25)")
    source.add_argument("--connections", type=Path, help="CSV de la matriz vectorizada (BMA sobre PCA y retroproyección)")
    bma.add_argument("--traits", type=Path, required=True, help="CSV de rasgos")
    bma.add_argument("--trait", required=True, help="Nombre del rasgo")
    bma.add_argument("--threshold", type=float, default=settings.BMA_THRESHOLD)
    bma.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    bma.add_argument("--g", type=float, default=None, help="Parámetro g del prior (por defecto n)")
    bma.add_argument("--draws", type=int, default=settings.BMA_DRAWS)
    bma.add_argument("--k", type=int, default=settings.DEFAULT_K, help="Componentes PCA con --connections")
    bma.add_argument("--top", type=int, default=settings.TOP_CONNECTIONS, help="Conexiones con --connections")
    bma.add_argument("--models-out", type=Path, default=None, help="CSV de modelos retenidos")
    bma.add_argument("--out", type=Path, required=True, help="CSV feature,inclusion_prob,avg_coef,ci_low,ci_high,selected")
    add_threads_argument(bma)
    bma.set_defaults(handler=handle_bma)


def _prepare_features(X: FeatureMatrix) -> FeatureMatrix:
    if np.isnan(X.values).any():
        raise ValidationError("la matriz de características tiene valores faltantes")
    return connectome_service.standardize(connectome_service.filter_zero_variance(X))


def _fit_pca(X: FeatureMatrix, K: int) -> tuple:
    standardized = _prepare_features(X)
    model: PCAModel = stats_service.pca_fit(standardized, K)
    return model, standardized


@with_error_handling("cli.pca")
def handle_pca(args: argparse.Namespace) -> CommandResult:
    """
    PCA con K componentes tras filtrar varianza cero y estandarizar.

    Escribe las puntuaciones en --out y la varianza por componente en `<out>.variance.csv`.
    """
    config = make_run_config(
        subcommand="pca", inputs={"features": args.features}, outputs={"out": args.out}, K=args.k
    )
    model, standardized = _fit_pca(connectome_service.read_features(args.features), config.K)
    scores = stats_service.pca_features(model, standardized)
    variance = pd.DataFrame({
        "component": scores.column_labels,
        "singular_value": model.singular_values,
        "explained_variance": model.explained_variance,
    })
    outputs = [
        connectome_service.write_features(args.out, scores),
        file_store.write_csv(args.out.with_name(args.out.stem + ".variance.csv"), variance),
    ]
    return CommandResult(outputs=outputs, inputs=dict(config.inputs))


@with_error_handling("cli.cca")
def handle_cca(args: argparse.Namespace) -> CommandResult:
    """CCA con rasgos filtrados por faltantes, imputados por la media y estandarizados."""
    config = make_run_config(
        subcommand="cca",
        inputs={"features": args.features, "traits": args.traits},
        outputs={"out": args.out},
        missing_threshold=args.missing_threshold,
    )
    X, Y = connectome_service.align_rows(
        connectome_service.read_features(args.features), connectome_service.load_traits(args.traits)
    )
    X = _prepare_features(X)
    Y = connectome_service.drop_sparse_traits(Y, config.missing_threshold)
    Y = connectome_service.standardize(connectome_service.impute_mean(Y))
    model = stats_service.cca_fit(X, Y, ridge=args.ridge)
    r, _ = stats_service.canonical_variates(model, X, Y)
    frame = report_service.cca_frame(
        model, stats_service.wilks_test(model, X.n, X.d, Y.d), stats_service.trait_correlations(r[:, 0], Y)
    )
    return CommandResult(outputs=[file_store.write_csv(args.out, frame)], inputs=dict(config.inputs))


@with_error_handling("cli.cv")
def handle_cv(args: argparse.Namespace) -> CommandResult:
    """Reporte de validación cruzada `representation,regressor,trait,…` para árbol y PCA."""
    config = make_run_config(
        subcommand="cv",
        inputs={"features_tree": args.features_tree, "features_pca": args.features_pca, "traits": args.traits},
        outputs={"out": args.out},
        folds=args.folds,
        repeats=args.repeats,
        seed=args.seed,
        missing_threshold=args.missing_threshold,
        threads=args.threads,
    )
    tree = connectome_service.read_features(args.features_tree)
    tree, pca = connectome_service.align_rows(tree, connectome_service.read_features(args.features_pca))
    tree, traits = connectome_service.align_rows(tree, connectome_service.load_traits(args.traits))
    traits = connectome_service.drop_sparse_traits(traits, config.missing_threshold)
    gp = GPConfig(starts=args.gp_starts, max_evals=args.gp_max_evals)
    report = regression_service.evaluate(
        {"tree": tree, "am_pca": pca},
        traits,
        select_regressors(args.regressors, gp),
        make_cv_config(folds=config.folds, repeats=config.repeats, seed=config.seed),
        config.threads,
    )
    return CommandResult(
        outputs=[file_store.write_csv(args.out, report.to_frame())], inputs=dict(config.inputs), seed=config.seed
    )


@with_error_handling("cli.bma")
def handle_bma(args: argparse.Namespace) -> CommandResult:
    """
    BMA de un rasgo sobre características (p <= 25) o sobre componentes PCA.

    Con --connections escribe además las conexiones principales en `<out>.connections.csv`.
    """
    config = make_run_config(
        subcommand="bma",
        inputs={"features": args.features, "connections": args.connections, "traits": args.traits},
        outputs={"out": args.out, "models_out": args.models_out},
        K=args.k,
        seed=args.seed,
        threshold=args.threshold,
        threads=args.threads,
    )
    X, Y = connectome_service.align_rows(
        connectome_service.read_features(args.features or args.connections), connectome_service.load_traits(args.traits)
    )
    y_all = Y.column(args.trait)
    observed = np.flatnonzero(~np.isnan(y_all))
    X, y = X.select_rows(observed), y_all[observed]

    outputs = []
    if args.connections is not None:
        model, standardized = _fit_pca(X, config.K)
        scores = stats_service.pca_transform(model, standardized)
        result, _, top = bma_service.pca_connection_coefficients(
            scores, y, model, threshold=config.threshold, m=args.top, seed=config.seed, threads=config.threads
        )
        outputs.append(file_store.write_csv(
            args.out.with_name(args.out.stem + ".connections.csv"), pd.DataFrame(top, columns=["connection", "beta"])
        ))
    else:
        result = bma_service.bma_fit(
            _prepare_features(X), y, g=args.g, seed=config.seed, draws=args.draws, threads=config.threads
        )
    outputs.insert(0, bma_service.write_result(args.out, result, config.threshold))
    if args.models_out is not None:
        outputs.append(file_store.write_csv(args.models_out, bma_service.models_frame(result)))
    return CommandResult(outputs=outputs, inputs=dict(config.inputs), seed=config.seed)

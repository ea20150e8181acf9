"""
Servicio de orquestación del pipeline completo.

Etapas:
1. Cohorte: sintética (desde un CSV de configuración) o leída de un manifiesto
2. Representaciones: árbol (nodos internos) y PCA de la matriz vectorizada filtrada
3. CCA de cada representación contra los rasgos, con prueba de Wilks
4. Validación cruzada repetida de todos los regresores
5. BMA por rasgo sobre el árbol y sobre las componentes (retroproyectadas a conexiones)
6. Figuras SVG y resumen Markdown

Todas las salidas se escriben en un directorio; el resultado es reproducible
con la misma configuración e independiente del número de hilos.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticValidationError

from src.config import settings
from src.dependencies import get_hierarchy
from src.integrations.file_store import file_store
from src.services.atlas_service import AtlasHierarchy
from src.services.bma_service import BMAResult, SelectedFeature, bma_service
from src.services.connectome_service import AdjacencyMatrix, FeatureMatrix, connectome_service
from src.services.regression_service import CVConfig, EvalReport, GPConfig, regression_service, select_regressors
from src.services.report_service import report_service
from src.services.stats_service import CCAModel, PCAModel, WilksRow, stats_service
from src.services.synth_service import GroundTruth, synth_service
from src.services.tree_service import ConnectomeTree, tree_service
from src.services.viz_service import viz_service
from src.utils.error_handler import ValidationError, with_error_handling

logger = logging.getLogger(__name__)

TREE = "tree"
AM_PCA = "am_pca"


class PipelineServiceError(ValidationError):
    """Exceção personalizada para configurações do pipeline."""
    pass


class PipelineOptions(BaseModel):
    """Entradas y parámetros del pipeline."""
    model_config = ConfigDict(frozen=True)

    out_dir: Path
    hierarchy_path: Optional[Path] = None
    synth_config_path: Optional[Path] = None
    cohort_manifest: Optional[Path] = None
    traits_path: Optional[Path] = None
    desirability_path: Optional[Path] = None
    K: int = Field(default=settings.DEFAULT_K, ge=1)
    cv: CVConfig = Field(default_factory=CVConfig)
    gp: GPConfig = Field(default_factory=GPConfig)
    regressors: Optional[List[str]] = None
    bma_traits: Optional[List[str]] = None
    run_bma: bool = True
    threshold: float = Field(default=settings.BMA_THRESHOLD, ge=0, le=1)
    missing_threshold: float = Field(default=settings.MISSING_THRESHOLD, gt=0, lt=1)
    top_connections: int = Field(default=settings.TOP_CONNECTIONS, ge=1)
    contrast_fraction: float = Field(default=0.10, gt=0, le=0.5)
    real_valued: bool = False
    threads: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _one_source(self) -> "PipelineOptions":
        has_cohort = self.cohort_manifest is not None or self.traits_path is not None
        if self.synth_config_path is not None and has_cohort:
            raise ValueError("use --synth-config o --cohort/--traits, no ambos")
        if self.synth_config_path is None and (self.cohort_manifest is None or self.traits_path is None):
            raise ValueError("se necesita --synth-config o bien --cohort y --traits")
        return self


def make_pipeline_options(**kwargs) -> PipelineOptions:
    """Construye PipelineOptions traduciendo errores de pydantic a errores de validación del toolkit."""
    try:
        return PipelineOptions(**kwargs)
    except PydanticValidationError as e:
        errors = "; ".join(err["msg"] for err in e.errors())
        raise PipelineServiceError(f"opciones del pipeline inválidas: {errors}") from None


@dataclass
class CCAOutcome:
    model: CCAModel
    wilks: List[WilksRow]
    correlations: np.ndarray


@dataclass
class BMAOutcome:
    """BMA de un rasgo en ambas representaciones."""
    tree_result: Optional[BMAResult]
    tree_selected: List[SelectedFeature]
    pca_result: Optional[BMAResult]
    top_connections: List[tuple]


@dataclass
class PipelineResult:
    """Resultado del pipeline (lo que resume summary.md)."""
    source: str
    seed: int
    K: int
    n_subjects: int
    p: int
    hierarchy_nodes: int
    tree_dim: int
    am_dim: int
    am_dim_filtered: int
    traits_kept: List[str]
    traits_dropped: List[str]
    cca: Dict[str, CCAOutcome]
    cv_report: EvalReport
    bma: Dict[str, BMAOutcome] = field(default_factory=dict)
    ground_truth: Optional[GroundTruth] = None
    outputs: List[str] = field(default_factory=list)
    paths: Dict[str, Path] = field(default_factory=dict)


@dataclass
class _Cohort:
    hierarchy: AtlasHierarchy
    matrices: List[AdjacencyMatrix]
    traits: FeatureMatrix
    desirability: Dict[str, str]
    truth: Optional[GroundTruth]
    source: str
    seed: int


@dataclass
class _Representations:
    trees: List[ConnectomeTree]
    tree_features: FeatureMatrix
    tree_standardized: FeatureMatrix
    am_dim: int
    am_filtered: FeatureMatrix
    pca: PCAModel
    pca_scores: FeatureMatrix
    traits: FeatureMatrix
    traits_standardized: FeatureMatrix
    traits_dropped: List[str]


class PipelineService:
    """Serviço de orquestração do pipeline de ponta a ponta."""

    def run(self, options: PipelineOptions) -> PipelineResult:
        """
        Ejecuta el pipeline y escribe todas las salidas en options.out_dir.

        Args:
            options: Entradas y parámetros

        Returns:
            PipelineResult con las rutas escritas en `paths`
        """
        out_dir = Path(options.out_dir)
        paths: Dict[str, Path] = {}

        cohort = self._load_cohort(options, out_dir, paths)
        reps = self._build_representations(options, cohort)
        paths["trees"] = tree_service.write_trees(out_dir / "trees.csv", reps.trees)
        paths["features_tree"] = connectome_service.write_features(out_dir / "features_tree.csv", reps.tree_features)
        paths["features_am_pca"] = connectome_service.write_features(out_dir / "features_am_pca.csv", reps.pca_scores)

        cca = self._run_cca(reps)
        for name, outcome in cca.items():
            paths[f"cca_{name}"] = file_store.write_csv(
                out_dir / f"cca_{name}.csv",
                report_service.cca_frame(outcome.model, outcome.wilks, outcome.correlations),
            )

        cv_report = self._run_cv(options, reps)
        paths["cv_report"] = file_store.write_csv(out_dir / "cv_report.csv", cv_report.to_frame())

        bma = self._run_bma(options, cohort, reps, out_dir, paths) if options.run_bma else {}
        self._render_plots(options, cohort, reps, cca, bma, out_dir, paths)

        result = PipelineResult(
            source=cohort.source,
            seed=cohort.seed,
            K=reps.pca.K,
            n_subjects=len(cohort.matrices),
            p=cohort.hierarchy.p,
            hierarchy_nodes=len(cohort.hierarchy.nodes),
            tree_dim=reps.tree_features.d,
            am_dim=reps.am_dim,
            am_dim_filtered=reps.am_filtered.d,
            traits_kept=list(reps.traits.column_labels),
            traits_dropped=reps.traits_dropped,
            cca=cca,
            cv_report=cv_report,
            bma=bma,
            ground_truth=cohort.truth,
        )
        summary_path = out_dir / "summary.md"
        result.outputs = sorted({path.relative_to(out_dir).as_posix() for path in paths.values()} | {"summary.md"})
        paths["summary"] = file_store.write_text(summary_path, report_service.generate_summary(result))
        result.paths = paths
        logger.info("Pipeline completado", extra={"outputs": len(paths), "out_dir": str(out_dir)})
        return result

    @with_error_handling("pipeline.cohort")
    def _load_cohort(self, options: PipelineOptions, out_dir: Path, paths: Dict[str, Path]) -> _Cohort:
        h = get_hierarchy(options.hierarchy_path)
        if options.synth_config_path is not None:
            config = synth_service.parse_synth_config(file_store.read_text(options.synth_config_path), h)
            generated = synth_service.generate_cohort(config, options.threads)
            for name, path in synth_service.write_cohort(out_dir / "cohort", generated).items():
                paths[f"cohort_{name}"] = path
            return _Cohort(
                hierarchy=h,
                matrices=generated.matrices,
                traits=generated.traits,
                desirability=generated.desirability,
                truth=generated.truth,
                source=f"cohorte sintética ({Path(options.synth_config_path).name})",
                seed=config.seed,
            )

        matrices = connectome_service.load_cohort(options.cohort_manifest, options.real_valued, options.threads)
        traits = connectome_service.load_traits(options.traits_path)
        desirability = {}
        if options.desirability_path is not None:
            desirability = connectome_service.load_desirability(options.desirability_path)
        return _Cohort(
            hierarchy=h,
            matrices=matrices,
            traits=traits,
            desirability=desirability,
            truth=None,
            source=f"cohorte ({Path(options.cohort_manifest).name})",
            seed=options.cv.seed,
        )

    @with_error_handling("pipeline.representations")
    def _build_representations(self, options: PipelineOptions, cohort: _Cohort) -> _Representations:
        h = cohort.hierarchy
        mismatched = sorted({A.p for A in cohort.matrices} - {h.p})
        if mismatched:
            raise PipelineServiceError(f"la jerarquía tiene {h.p} hojas y las matrices p={mismatched}")

        trees = tree_service.build_cohort_trees(h, cohort.matrices, options.threads)
        tree_features = tree_service.trees_to_features(trees)
        tree_features, traits = connectome_service.align_rows(tree_features, cohort.traits)

        kept = connectome_service.drop_sparse_traits(traits, options.missing_threshold)
        if kept.d == 0:
            raise PipelineServiceError("ningún rasgo supera el filtro de faltantes")
        dropped = [label for label in traits.column_labels if label not in set(kept.column_labels)]
        traits_standardized = connectome_service.standardize(connectome_service.impute_mean(kept))

        tree_variable = connectome_service.filter_zero_variance(tree_features)
        tree_standardized = connectome_service.standardize(tree_variable)

        am = connectome_service.vectorize_upper(cohort.matrices)
        am_filtered = connectome_service.filter_zero_variance(am)
        am_standardized = connectome_service.standardize(am_filtered)
        K = min(options.K, am_standardized.n - 1, am_standardized.d)
        if K != options.K:
            logger.warning("K reducido al máximo admisible", extra={"requested": options.K, "used": K})
        pca = stats_service.pca_fit(am_standardized, K)
        scores = stats_service.pca_features(pca, am_standardized)

        return _Representations(
            trees=trees,
            tree_features=tree_variable,
            tree_standardized=tree_standardized,
            am_dim=am.d,
            am_filtered=am_filtered,
            pca=pca,
            pca_scores=scores,
            traits=kept,
            traits_standardized=traits_standardized,
            traits_dropped=dropped,
        )

    @with_error_handling("pipeline.cca")
    def _run_cca(self, reps: _Representations) -> Dict[str, CCAOutcome]:
        Y = reps.traits_standardized
        outcomes = {}
        for name, X in ((TREE, reps.tree_standardized), (AM_PCA, connectome_service.standardize(reps.pca_scores))):
            model = stats_service.cca_fit(X, Y)
            r, _ = stats_service.canonical_variates(model, X, Y)
            outcomes[name] = CCAOutcome(
                model=model,
                wilks=stats_service.wilks_test(model, X.n, X.d, Y.d),
                correlations=stats_service.trait_correlations(r[:, 0], Y),
            )
            logger.info("CCA calculado", extra={"representation": name, "rho_1": float(model.rho[0])})
        return outcomes

    @with_error_handling("pipeline.cv")
    def _run_cv(self, options: PipelineOptions, reps: _Representations) -> EvalReport:
        return regression_service.evaluate(
            {TREE: reps.tree_features, AM_PCA: reps.pca_scores},
            reps.traits,
            select_regressors(options.regressors, options.gp),
            options.cv,
            options.threads,
        )

    def _bma_traits(self, options: PipelineOptions, cohort: _Cohort, reps: _Representations) -> List[str]:
        available = list(reps.traits.column_labels)
        if options.bma_traits is not None:
            unknown = [trait for trait in options.bma_traits if trait not in available]
            if unknown:
                raise PipelineServiceError(f"rasgos para BMA no disponibles: {unknown}")
            return list(options.bma_traits)
        if cohort.truth is not None:
            return [trait for trait in cohort.truth.planted_traits() if trait in available]
        return []

    @with_error_handling("pipeline.bma")
    def _run_bma(
        self,
        options: PipelineOptions,
        cohort: _Cohort,
        reps: _Representations,
        out_dir: Path,
        paths: Dict[str, Path],
    ) -> Dict[str, BMAOutcome]:
        outcomes = {}
        for trait in self._bma_traits(options, cohort, reps):
            y_all = reps.traits.column(trait)
            observed = np.flatnonzero(~np.isnan(y_all))
            y = y_all[observed]

            tree_result, selected = None, []
            if reps.tree_standardized.d <= settings.BMA_MAX_FEATURES:
                tree_result = bma_service.bma_fit(
                    reps.tree_standardized.select_rows(observed),
                    y,
                    seed=options.cv.seed,
                    threads=options.threads,
                )
                selected = bma_service.important_features(tree_result, options.threshold)
                paths[f"bma_tree_{trait}"] = bma_service.write_result(
                    out_dir / f"bma_tree_{trait}.csv", tree_result, options.threshold
                )
            else:
                logger.warning(
                    "BMA del árbol omitido: demasiadas características",
                    extra={"trait": trait, "features": reps.tree_standardized.d},
                )

            pca_result, top = None, []
            if reps.pca.K <= settings.BMA_MAX_FEATURES:
                pca_result, _, top = bma_service.pca_connection_coefficients(
                    reps.pca_scores.values[observed],
                    y,
                    reps.pca,
                    threshold=options.threshold,
                    m=options.top_connections,
                    seed=options.cv.seed,
                    threads=options.threads,
                )
                paths[f"bma_am_pca_{trait}"] = bma_service.write_result(
                    out_dir / f"bma_am_pca_{trait}.csv", pca_result, options.threshold
                )
                paths[f"connections_{trait}"] = file_store.write_csv(
                    out_dir / f"connections_{trait}.csv", pd.DataFrame(top, columns=["connection", "beta"])
                )
            outcomes[trait] = BMAOutcome(
                tree_result=tree_result, tree_selected=selected, pca_result=pca_result, top_connections=top
            )
        return outcomes

    @with_error_handling("pipeline.plots")
    def _render_plots(
        self,
        options: PipelineOptions,
        cohort: _Cohort,
        reps: _Representations,
        cca: Dict[str, CCAOutcome],
        bma: Dict[str, BMAOutcome],
        out_dir: Path,
        paths: Dict[str, Path],
    ) -> None:
        mean = tree_service.mean_tree(reps.trees)
        paths["plot_chord"] = file_store.write_text(out_dir / "chord.svg", viz_service.render_chord(mean))
        paths["plot_tree"] = file_store.write_text(out_dir / "tree.svg", viz_service.render_tree_diagram(mean))

        contrast_trait = next(iter(bma), reps.traits.column_labels[0])
        top, bottom = tree_service.contrast_groups(
            reps.trees, reps.traits.column(contrast_trait), options.contrast_fraction
        )
        paths["plot_tree_contrast"] = file_store.write_text(
            out_dir / "tree_contrast.svg", viz_service.render_tree_diagram(top, comparison=bottom)
        )

        outcome = cca[TREE]
        paths["plot_cca"] = file_store.write_text(
            out_dir / "cca.svg",
            viz_service.render_cca_scatter(
                outcome.correlations,
                outcome.model.y_loadings[:, 0],
                outcome.model.y_labels,
                cohort.desirability or None,
            ),
        )


# Instancia global del servicio
pipeline_service = PipelineService()

"""
Servicio de generación de reportes.

Produce las tablas CSV de resultados (verificación, CCA) y el resumen en
Markdown del pipeline completo. Los reportes no incluyen marcas de tiempo: dos
ejecuciones con la misma configuración producen los mismos bytes.
"""
import logging
from typing import TYPE_CHECKING, Sequence

import numpy as np
import pandas as pd

from src.services.homology_service import VerificationRow
from src.services.stats_service import CCAModel, WilksRow
from src.utils.error_handler import ValidationError

if TYPE_CHECKING:
    from src.services.pipeline_service import PipelineResult

logger = logging.getLogger(__name__)

VERIFY_COLUMNS = ["node_name", "weight", "corank", "match"]
CCA_COLUMNS = ["table", "row", "column", "value"]
TOP_TRAITS = 5
TOP_CONNECTIONS_SHOWN = 10


class ReportServiceError(ValidationError):
    """Exceção personalizada para tabelas de resultados inválidas."""
    pass


def _num(value: float) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "n/a"
    return f"{value:.3f}"


class ReportService:
    """Serviço para geração de tabelas e resumos."""

    def verify_frame(self, rows: Sequence[VerificationRow]) -> pd.DataFrame:
        """Reporte por nodo `node_name,weight,corank,match`."""
        return pd.DataFrame(
            [(row.node_name, row.weight, row.corank, row.match) for row in rows], columns=VERIFY_COLUMNS
        )

    def cca_frame(self, model: CCAModel, wilks: Sequence[WilksRow], trait_correlations: np.ndarray) -> pd.DataFrame:
        """
        Tabla larga `table,row,column,value` con cargas, correlaciones y prueba de Wilks.

        Tablas: x_loading (característica × componente), y_loading (rasgo × componente),
        rho, wilks (k × lambda/statistic/df/p_value) y trait_correlation (rasgo).
        """
        records = []
        components = [f"CV{k + 1}" for k in range(model.m)]
        for i, label in enumerate(model.x_labels):
            for k, component in enumerate(components):
                records.append(("x_loading", label, component, float(model.x_loadings[i, k])))
        for i, label in enumerate(model.y_labels):
            for k, component in enumerate(components):
                records.append(("y_loading", label, component, float(model.y_loadings[i, k])))
        for k, component in enumerate(components):
            records.append(("rho", component, "rho", float(model.rho[k])))
        for row in wilks:
            component = f"CV{row.k}"
            records.append(("wilks", component, "lambda", row.lam))
            records.append(("wilks", component, "statistic", row.statistic))
            records.append(("wilks", component, "df", float(row.df)))
            records.append(("wilks", component, "p_value", row.p_value))
        for label, corr in zip(model.y_labels, trait_correlations):
            records.append(("trait_correlation", label, "CV1", float(corr)))
        return pd.DataFrame.from_records(records, columns=CCA_COLUMNS)

    def cca_scatter_inputs(self, frame: pd.DataFrame) -> tuple:
        """
        Extrae (correlaciones, cargas del primer componente, etiquetas) de una tabla CCA.

        Raises:
            ReportServiceError: Cabecera distinta o rasgos sin carga
        """
        if list(frame.columns) != CCA_COLUMNS:
            raise ReportServiceError(f"cabecera esperada {','.join(CCA_COLUMNS)}")
        correlations = frame[frame["table"] == "trait_correlation"]
        loadings = frame[(frame["table"] == "y_loading") & (frame["column"] == "CV1")]
        by_trait = dict(zip(loadings["row"].astype(str), loadings["value"].astype(float)))
        labels = [str(label) for label in correlations["row"]]
        missing = [label for label in labels if label not in by_trait]
        if missing or not labels:
            raise ReportServiceError(f"la tabla CCA no tiene cargas para: {missing or 'ningún rasgo'}")
        return (
            correlations["value"].astype(float).to_numpy(),
            np.array([by_trait[label] for label in labels]),
            labels,
        )

    def generate_summary(self, result: "PipelineResult") -> str:
        """
        Genera el resumen Markdown del pipeline.

        Args:
            result: Resultado del pipeline

        Returns:
            Texto Markdown terminado en salto de línea
        """
        sections = [
            self._generate_header(result),
            self._generate_cohort_section(result),
            self._generate_cca_section(result),
            self._generate_cv_section(result),
        ]
        if result.bma:
            sections.append(self._generate_bma_section(result))
        if result.ground_truth is not None:
            sections.append(self._generate_truth_section(result))
        sections.append(self._generate_outputs_section(result))
        return "\n\n".join(sections) + "\n"

    def _generate_header(self, result: "PipelineResult") -> str:
        header = "# Resumen del análisis de conectomas en árbol\n\n"
        header += f"**Origen:** {result.source}\n"
        header += f"**Semilla:** {result.seed}\n"
        header += f"**K (componentes PCA):** {result.K}"
        return header

    def _generate_cohort_section(self, result: "PipelineResult") -> str:
        section = "## Cohorte\n\n"
        section += f"- Sujetos: {result.n_subjects}\n"
        section += f"- Regiones (hojas): {result.p}\n"
        section += f"- Nodos de la jerarquía: {result.hierarchy_nodes} ({result.tree_dim} internos)\n"
        section += f"- Dimensión de la matriz vectorizada: {result.am_dim} ({result.am_dim_filtered} tras filtrar varianza cero)\n"
        section += f"- Rasgos retenidos: {len(result.traits_kept)}"
        if result.traits_dropped:
            section += f" (eliminados por faltantes: {', '.join(result.traits_dropped)})"
        return section

    def _generate_cca_section(self, result: "PipelineResult") -> str:
        section = "## Análisis de correlación canónica\n\n"
        section += "| Representación | rho_1 | Wilks p (k=1) | Rasgos más correlacionados |\n"
        section += "|---|---|---|---|\n"
        for name, cca in result.cca.items():
            order = np.lexsort((np.arange(len(cca.correlations)), -np.abs(cca.correlations)))[:TOP_TRAITS]
            top = ", ".join(f"{cca.model.y_labels[i]} ({cca.correlations[i]:+.2f})" for i in order)
            section += f"| {name} | {_num(float(cca.model.rho[0]))} | {cca.wilks[0].p_value:.3g} | {top} |\n"
        return section.rstrip("\n")

    def _generate_cv_section(self, result: "PipelineResult") -> str:
        section = "## Validación cruzada\n\n"
        config = result.cv_report.config
        section += f"{config.folds} folds × {config.repeats} repeticiones, semilla {config.seed}.\n\n"
        section += "| Representación | Regresor | Rasgo | Correlación | Mejora MSE (%) |\n"
        section += "|---|---|---|---|---|\n"
        for row in result.cv_report.rows:
            section += (
                f"| {row.representation} | {row.regressor} | {row.trait} "
                f"| {_num(row.corr_mean)} ± {_num(row.corr_sd)} "
                f"| {row.mse_impr_mean:.2f} ± {row.mse_impr_sd:.2f} |\n"
            )
        return section.rstrip("\n")

    def _generate_bma_section(self, result: "PipelineResult") -> str:
        section = "## Promediado bayesiano de modelos\n"
        for trait, bma in result.bma.items():
            section += f"\n### {trait}\n\n"
            if bma.tree_selected:
                section += "Nodos del árbol seleccionados:\n\n"
                for feature in bma.tree_selected:
                    section += (
                        f"- {feature.label}: P(incl) = {_num(feature.inclusion_prob)}, "
                        f"coef = {feature.avg_coef:+.3f} [{feature.ci_low:+.3f}, {feature.ci_high:+.3f}]\n"
                    )
            else:
                section += "Ningún nodo del árbol supera el umbral.\n"
            if bma.top_connections:
                section += "\nConexiones principales (retroproyección PCA):\n\n"
                for label, beta in bma.top_connections[:TOP_CONNECTIONS_SHOWN]:
                    section += f"- {label}: {beta:+.4f}\n"
        return section.rstrip("\n")

    def _generate_truth_section(self, result: "PipelineResult") -> str:
        section = "## Señal plantada\n\n"
        effects = result.ground_truth.effects
        if not effects:
            return section + "Sin efectos plantados."
        section += "| Rasgo | Nodo | Efecto |\n|---|---|---|\n"
        for trait, node_name, effect in effects:
            section += f"| {trait} | {node_name} | {effect:+.3f} |\n"
        section += f"\nPares de varianza cero plantados: {len(result.ground_truth.zero_variance_pairs)}"
        return section

    def _generate_outputs_section(self, result: "PipelineResult") -> str:
        section = "## Archivos generados\n\n"
        section += "\n".join(f"- `{name}`" for name in sorted(result.outputs))
        return section


# Instancia global del servicio
report_service = ReportService()

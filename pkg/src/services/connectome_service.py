"""
Servicio de ingestión de conectomas y matrices de características.

Este módulo fornece:
- Lectura/escritura de matrices de adyacencia (conteos de fibras) con validación
- Vectorización del triángulo superior y su inversa
- Transformaciones de cohorte: varianza cero, estandarización, imputación, rasgos dispersos
- Lectura de rasgos, manifiestos de cohorte y etiquetas de deseabilidad
"""
import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.config import settings
from src.dependencies import parallel_map
from src.integrations.file_store import file_store
from src.utils.error_handler import ValidationError

logger = logging.getLogger(__name__)

PAIR_SEPARATOR = "–"
MISSING_TOKENS = ["NA", ""]


class ConnectomeServiceError(ValidationError):
    """Exceção personalizada para erros do serviço de conectomas."""
    pass


@dataclass
class AdjacencyMatrix:
    """
    Matriz simétrica p×p de conteos de fibras de un sujeto.

    En modo real (`counts` de tipo float) acepta conectividades ponderadas.
    """
    subject_id: str
    counts: np.ndarray
    roi_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.roi_names:
            self.roi_names = [f"ROI_{i}" for i in range(self.counts.shape[0])]

    @property
    def p(self) -> int:
        return int(self.counts.shape[0])

    @property
    def real_valued(self) -> bool:
        return self.counts.dtype.kind == "f"


@dataclass
class FeatureMatrix:
    """
    Matriz n×d de características (o rasgos) con etiquetas y máscara de columnas.

    Attributes:
        values: Valores reales (NaN = faltante)
        column_labels: Etiqueta única por columna
        row_labels: subject_id por fila
        column_mask: Indicador de columnas retenidas sobre el espacio original
    """
    values: np.ndarray
    column_labels: List[str]
    row_labels: List[str] = field(default_factory=list)
    column_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ConnectomeServiceError("la matriz de características debe ser bidimensional")
        if not self.row_labels:
            self.row_labels = [str(i) for i in range(self.values.shape[0])]
        if self.column_mask is None:
            self.column_mask = np.ones(self.values.shape[1], dtype=bool)
        if len(self.column_labels) != self.values.shape[1]:
            raise ConnectomeServiceError(
                f"{len(self.column_labels)} etiquetas para {self.values.shape[1]} columnas"
            )
        if len(set(self.column_labels)) != len(self.column_labels):
            raise ConnectomeServiceError("etiquetas de columna duplicadas")
        if len(self.row_labels) != self.values.shape[0]:
            raise ConnectomeServiceError(
                f"{len(self.row_labels)} etiquetas de fila para {self.values.shape[0]} filas"
            )
        if int(self.column_mask.sum()) != self.values.shape[1]:
            raise ConnectomeServiceError("la cardinalidad de la máscara no coincide con d")

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])

    def column(self, label: str) -> np.ndarray:
        try:
            return self.values[:, self.column_labels.index(label)]
        except ValueError:
            raise ConnectomeServiceError(f"columna inexistente: {label!r}") from None

    def select_columns(self, keep: np.ndarray) -> "FeatureMatrix":
        """Subconjunto de columnas actuales; compone la máscara original."""
        keep = np.asarray(keep, dtype=bool)
        mask = self.column_mask.copy()
        mask[np.flatnonzero(mask)[~keep]] = False
        return FeatureMatrix(
            values=self.values[:, keep],
            column_labels=[label for label, k in zip(self.column_labels, keep) if k],
            row_labels=list(self.row_labels),
            column_mask=mask,
        )

    def select_rows(self, rows: Sequence[int]) -> "FeatureMatrix":
        rows = list(rows)
        return FeatureMatrix(
            values=self.values[rows, :],
            column_labels=list(self.column_labels),
            row_labels=[self.row_labels[i] for i in rows],
            column_mask=self.column_mask.copy(),
        )


class ConnectomeService:
    """Serviço de ingestão e transformação de conectomas."""

    def load_adjacency(self, text: str, subject_id: str = "", real_valued: bool = False) -> AdjacencyMatrix:
        """
        Parsea una matriz de adyacencia CSV (cabecera con p nombres y p filas de p valores).

        Args:
            text: Contenido CSV
            subject_id: Identificador del sujeto
            real_valued: Acepta valores no enteros (conectividad ponderada)

        Returns:
            AdjacencyMatrix validada

        Raises:
            ConnectomeServiceError: Filas irregulares, valores no numéricos, negativos o asimetría
        """
        rows = [
            (line_number, [cell.strip() for cell in record])
            for line_number, record in enumerate(csv.reader(io.StringIO(text)), start=1)
            if record and any(cell.strip() for cell in record)
        ]
        if not rows:
            raise ConnectomeServiceError("matriz de adyacencia vacía")
        _, names = rows[0]
        p = len(names)
        body = rows[1:]
        if len(body) != p:
            raise ConnectomeServiceError(f"se esperaban {p} filas de datos, hay {len(body)}")

        values = np.empty((p, p), dtype=float)
        for i, (line_number, record) in enumerate(body):
            if len(record) != p:
                raise ConnectomeServiceError(
                    f"línea {line_number}: fila irregular con {len(record)} valores (se esperaban {p})"
                )
            for j, cell in enumerate(record):
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise ConnectomeServiceError(
                        f"línea {line_number}: valor no numérico {cell!r}"
                    ) from None

        if not np.all(np.isfinite(values)):
            raise ConnectomeServiceError("la matriz contiene valores no finitos")
        if np.any(values < 0):
            i, j = np.argwhere(values < 0)[0]
            raise ConnectomeServiceError(f"entrada negativa en ({i}, {j}): {values[i, j]}")
        if not np.array_equal(values, values.T):
            i, j = np.argwhere(values != values.T)[0]
            raise ConnectomeServiceError(
                f"matriz asimétrica: counts[{i}][{j}]={values[i, j]} != counts[{j}][{i}]={values[j, i]}"
            )

        if real_valued:
            counts = values
        else:
            if not np.array_equal(values, np.round(values)):
                raise ConnectomeServiceError("conteos no enteros; use el modo real para conectividad ponderada")
            counts = values.astype(np.int64)
        return AdjacencyMatrix(subject_id=subject_id, counts=counts, roi_names=names)

    def write_adjacency(self, A: AdjacencyMatrix) -> str:
        """Serializa una matriz al formato CSV de entrada."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(A.roi_names)
        for row in A.counts:
            writer.writerow([repr(float(v)) if A.real_valued else int(v) for v in row])
        return buffer.getvalue()

    def load_cohort_manifest(self, path: Path | str) -> List[tuple]:
        """
        Lee un manifiesto `subject_id,adjacency_path`.

        Las rutas relativas se resuelven contra el directorio del manifiesto.

        Returns:
            Lista de (subject_id, ruta) en orden del archivo
        """
        path = Path(path)
        frame = file_store.read_csv(path, dtype=str, keep_default_na=False)
        if list(frame.columns) != ["subject_id", "adjacency_path"]:
            raise ConnectomeServiceError(f"{path}: cabecera esperada subject_id,adjacency_path")
        if frame["subject_id"].duplicated().any():
            raise ConnectomeServiceError(f"{path}: subject_id duplicado")
        entries = []
        for subject_id, adjacency_path in zip(frame["subject_id"], frame["adjacency_path"]):
            target = Path(adjacency_path)
            if not target.is_absolute():
                target = path.parent / target
            entries.append((subject_id, target))
        return entries

    def load_cohort(
        self, manifest_path: Path | str, real_valued: bool = False, threads: Optional[int] = None
    ) -> List[AdjacencyMatrix]:
        """
        Carga todas las matrices de un manifiesto en paralelo, preservando el orden.

        Args:
            manifest_path: Ruta al manifiesto de cohorte
            real_valued: Modo de conectividad ponderada
            threads: Hilos máximos

        Returns:
            Matrices en el orden del manifiesto
        """
        entries = self.load_cohort_manifest(manifest_path)

        def _load(entry):
            subject_id, adjacency_path = entry
            try:
                return self.load_adjacency(file_store.read_text(adjacency_path), subject_id, real_valued)
            except ConnectomeServiceError as e:
                raise ConnectomeServiceError(f"{adjacency_path}: {e}") from None

        cohort = parallel_map(_load, entries, threads)
        logger.info("Cohorte cargada", extra={"subjects": len(cohort), "manifest": str(manifest_path)})
        return cohort

    def vectorize_upper(self, cohort: Sequence[AdjacencyMatrix]) -> FeatureMatrix:
        """
        Vectoriza el triángulo superior (i<j, orden por filas) de cada sujeto.

        Args:
            cohort: Matrices con el mismo p

        Returns:
            FeatureMatrix n × p(p−1)/2 con etiquetas "ROI_i–ROI_j"

        Raises:
            ConnectomeServiceError: Si la cohorte está vacía o mezcla valores de p
        """
        if not cohort:
            raise ConnectomeServiceError("cohorte vacía")
        p = cohort[0].p
        mixed = sorted({A.p for A in cohort})
        if len(mixed) > 1:
            raise ConnectomeServiceError(f"la cohorte mezcla distintos p: {mixed}")
        iu, ju = np.triu_indices(p, k=1)
        names = cohort[0].roi_names
        labels = [f"{names[i]}{PAIR_SEPARATOR}{names[j]}" for i, j in zip(iu, ju)]
        values = np.vstack([A.counts[iu, ju].astype(float) for A in cohort])
        return FeatureMatrix(values=values, column_labels=labels, row_labels=[A.subject_id for A in cohort])

    def reassemble_symmetric(self, row: np.ndarray, p: int) -> np.ndarray:
        """Inversa de vectorize_upper: matriz simétrica con diagonal cero."""
        row = np.asarray(row)
        if row.shape != (p * (p - 1) // 2,):
            raise ConnectomeServiceError(f"longitud {row.shape} incompatible con p={p}")
        matrix = np.zeros((p, p), dtype=row.dtype)
        iu, ju = np.triu_indices(p, k=1)
        matrix[iu, ju] = row
        matrix[ju, iu] = row
        return matrix

    def filter_zero_variance(self, X: FeatureMatrix) -> FeatureMatrix:
        """
        Elimina columnas sin variabilidad (todos los valores iguales, comparación exacta).

        Args:
            X: Matriz con n >= 2

        Returns:
            Matriz filtrada; la máscara registra las columnas retenidas
        """
        if X.n < 2:
            raise ConnectomeServiceError("se necesitan al menos 2 sujetos para medir la varianza")
        keep = np.any(X.values != X.values[0:1, :], axis=0)
        removed = int((~keep).sum())
        if removed:
            logger.info("Columnas de varianza cero eliminadas", extra={"removed": removed, "retained": int(keep.sum())})
        return X.select_columns(keep)

    def standardize(self, X: FeatureMatrix) -> FeatureMatrix:
        """
        Centra y escala cada columna (desviación estándar muestral, denominador n−1).

        Raises:
            ConnectomeServiceError: Si hay valores faltantes o columnas de varianza cero
        """
        if np.isnan(X.values).any():
            raise ConnectomeServiceError("hay valores faltantes; impute antes de estandarizar")
        if X.n < 2:
            raise ConnectomeServiceError("se necesitan al menos 2 filas para estandarizar")
        means = X.values.mean(axis=0)
        sds = X.values.std(axis=0, ddof=1)
        zero = np.flatnonzero(sds == 0)
        if zero.size:
            raise ConnectomeServiceError(f"columna de varianza cero: {X.column_labels[zero[0]]!r}")
        return FeatureMatrix(
            values=(X.values - means) / sds,
            column_labels=list(X.column_labels),
            row_labels=list(X.row_labels),
            column_mask=X.column_mask.copy(),
        )

    def impute_mean(self, Y: FeatureMatrix) -> FeatureMatrix:
        """
        Sustituye faltantes por la media de los valores observados de la columna.

        Raises:
            ConnectomeServiceError: Si alguna columna no tiene valores observados
        """
        values = Y.values.copy()
        missing = np.isnan(values)
        empty = np.flatnonzero(missing.all(axis=0))
        if empty.size:
            raise ConnectomeServiceError(f"columna sin valores observados: {Y.column_labels[empty[0]]!r}")
        if missing.any():
            means = np.nanmean(values, axis=0)
            rows, cols = np.nonzero(missing)
            values[rows, cols] = means[cols]
        return FeatureMatrix(
            values=values,
            column_labels=list(Y.column_labels),
            row_labels=list(Y.row_labels),
            column_mask=Y.column_mask.copy(),
        )

    def drop_sparse_traits(self, Y: FeatureMatrix, threshold: float = settings.MISSING_THRESHOLD) -> FeatureMatrix:
        """
        Elimina columnas cuya fracción de faltantes supera el umbral.

        Args:
            Y: Rasgos con faltantes (NaN)
            threshold: Fracción en (0, 1); por defecto 0.10

        Returns:
            Rasgos retenidos
        """
        if not 0 < threshold < 1:
            raise ConnectomeServiceError(f"el umbral debe estar en (0, 1): {threshold}")
        fraction = np.isnan(Y.values).mean(axis=0)
        keep = fraction <= threshold
        dropped = [label for label, k in zip(Y.column_labels, keep) if not k]
        if dropped:
            logger.info("Rasgos dispersos eliminados", extra={"dropped": dropped, "threshold": threshold})
        return Y.select_columns(keep)

    def load_traits(self, path: Path | str) -> FeatureMatrix:
        """
        Lee la tabla de rasgos `subject_id,<rasgos…>`; vacío o `NA` = faltante.

        Raises:
            ConnectomeServiceError: Cabecera inválida o valores no numéricos
        """
        frame = file_store.read_csv(
            path, dtype={"subject_id": str}, na_values=MISSING_TOKENS, keep_default_na=False
        )
        return self._frame_to_features(frame, path)

    def read_features(self, path: Path | str) -> FeatureMatrix:
        """Lee una matriz de características `subject_id,<etiquetas…>`."""
        frame = file_store.read_csv(
            path, dtype={"subject_id": str}, na_values=MISSING_TOKENS, keep_default_na=False
        )
        return self._frame_to_features(frame, path)

    def _frame_to_features(self, frame: pd.DataFrame, path) -> FeatureMatrix:
        if not len(frame.columns) or frame.columns[0] != "subject_id":
            raise ConnectomeServiceError(f"{path}: la primera columna debe ser subject_id")
        data = frame.drop(columns=["subject_id"])
        try:
            values = data.apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
        except (ValueError, TypeError) as e:
            raise ConnectomeServiceError(f"{path}: valor no numérico ({e})") from None
        return FeatureMatrix(
            values=values,
            column_labels=[str(c) for c in data.columns],
            row_labels=[str(s) for s in frame["subject_id"]],
        )

    def features_to_frame(self, X: FeatureMatrix) -> pd.DataFrame:
        frame = pd.DataFrame(X.values, columns=X.column_labels)
        frame.insert(0, "subject_id", X.row_labels)
        return frame

    def write_features(self, path: Path | str, X: FeatureMatrix) -> Path:
        """Escribe `subject_id,<etiquetas…>`; los faltantes se escriben como NA."""
        frame = self.features_to_frame(X)
        return file_store.write_text(path, frame.to_csv(index=False, lineterminator="\n", na_rep="NA"))

    def align_rows(self, X: FeatureMatrix, Y: FeatureMatrix) -> tuple:
        """
        Alinea dos matrices por subject_id (orden de X).

        Raises:
            ConnectomeServiceError: Si algún sujeto de X no aparece en Y
        """
        if X.row_labels == Y.row_labels:
            return X, Y
        index = {label: i for i, label in enumerate(Y.row_labels)}
        missing = [label for label in X.row_labels if label not in index]
        if missing:
            raise ConnectomeServiceError(f"sujetos sin fila correspondiente: {missing[:5]}")
        return X, Y.select_rows([index[label] for label in X.row_labels])

    def load_desirability(self, path: Path | str) -> Dict[str, str]:
        """Lee etiquetas opcionales `trait,desirability` (texto libre, p. ej. desirable/undesirable)."""
        frame = file_store.read_csv(path, dtype=str, keep_default_na=False)
        if list(frame.columns) != ["trait", "desirability"]:
            raise ConnectomeServiceError(f"{path}: cabecera esperada trait,desirability")
        return dict(zip(frame["trait"], frame["desirability"]))


# Instancia global del servicio
connectome_service = ConnectomeService()

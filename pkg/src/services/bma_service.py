"""
Servicio de promediado bayesiano de modelos (BMA) para regresión lineal.

Enumera los 2^p modelos con prior g de Zellner (g = n por defecto) y prior
uniforme sobre modelos. El R² de cada modelo se actualiza con el operador
sweep siguiendo un código Gray sobre las máscaras de inclusión: cada paso
añade o quita una sola variable, O(p²) por modelo. El espacio de modelos se
divide en segmentos Gray contiguos procesados en paralelo y combinados en
orden con log-sum-exp.
"""
import heapq
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config import settings
from src.dependencies import parallel_map
from src.integrations.file_store import file_store
from src.services.connectome_service import FeatureMatrix
from src.services.stats_service import PCAModel, stats_service
from src.utils.error_handler import ValidationError

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["feature", "inclusion_prob", "avg_coef", "ci_low", "ci_high", "selected"]
PIVOT_TOLERANCE = 1e-10
SEGMENT_BITS = 14
SEGMENT_BATCH = 32


class BMAServiceError(ValidationError):
    """Exceção personalizada para entradas inválidas do BMA."""
    pass


@dataclass
class ModelRecord:
    """Modelo retenido: variables incluidas, peso posterior y estimaciones condicionales."""
    included: Tuple[int, ...]
    log_marginal: float
    r2: float
    ols_coef: np.ndarray
    inverse_diag: np.ndarray
    weight: float = 0.0


@dataclass
class BMAResult:
    """Resultado del promediado sobre todos los modelos."""
    labels: List[str]
    inclusion_prob: np.ndarray
    avg_coef: np.ndarray
    interval_low: np.ndarray
    interval_high: np.ndarray
    models_enumerated: int
    models_skipped: int
    log_normalizer: float
    g: float
    n: int
    top_models: List[ModelRecord] = field(default_factory=list)

    @property
    def p(self) -> int:
        return len(self.labels)


@dataclass
class SelectedFeature:
    index: int
    label: str
    inclusion_prob: float
    avg_coef: float
    ci_low: float
    ci_high: float

    @property
    def sign(self) -> int:
        return int(np.sign(self.avg_coef))


@dataclass
class _SegmentSums:
    """Sumas parciales de un segmento, escaladas por exp(−max_log)."""
    max_log: float
    total: float
    inclusion: np.ndarray
    coef: np.ndarray
    enumerated: int
    skipped: int
    retained: List[tuple]


def sweep(A: np.ndarray, k: int) -> np.ndarray:
    """Operador sweep sobre el pivote k (devuelve una matriz nueva)."""
    d = A[k, k]
    col = A[:, k].copy()
    row = A[k, :].copy()
    B = A - np.outer(col, row) / d
    B[k, :] = row / d
    B[:, k] = col / d
    B[k, k] = -1.0 / d
    return B


def reverse_sweep(A: np.ndarray, k: int) -> np.ndarray:
    """Inverso del sweep sobre el pivote k."""
    d = A[k, k]
    col = A[:, k].copy()
    row = A[k, :].copy()
    B = A - np.outer(col, row) / d
    B[k, :] = -row / d
    B[:, k] = -col / d
    B[k, k] = -1.0 / d
    return B


def gray(index: int) -> int:
    return index ^ (index >> 1)


class BMAService:
    """Serviço de seleção bayesiana de variáveis por enumeração completa."""

    def _log_marginal(self, r2: float, k: int, n: int, g: float) -> float:
        return 0.5 * (n - 1 - k) * np.log1p(g) - 0.5 * (n - 1) * np.log1p(g * (1.0 - r2))

    def _fresh_state(self, base: np.ndarray, mask: int, p: int) -> Optional[np.ndarray]:
        """Barre desde cero las variables de la máscara; None si el diseño es deficiente."""
        A = base
        for j in range(p):
            if mask >> j & 1:
                if A[j, j] <= PIVOT_TOLERANCE * base[j, j] or base[j, j] <= 0:
                    return None
                A = sweep(A, j)
        return A

    def _run_segment(
        self, base: np.ndarray, p: int, n: int, g: float, start: int, stop: int, retain: int
    ) -> _SegmentSums:
        sst = base[p, p]
        shrink = g / (1.0 + g)
        max_log = -np.inf
        total = 0.0
        inclusion = np.zeros(p)
        coef = np.zeros(p)
        retained: List[tuple] = []
        enumerated = skipped = 0

        state = self._fresh_state(base, gray(start), p)
        for index in range(start, stop):
            mask = gray(index)
            if index > start:
                if state is None:
                    state = self._fresh_state(base, mask, p)
                else:
                    k = (index & -index).bit_length() - 1
                    if mask >> k & 1:
                        if state[k, k] <= PIVOT_TOLERANCE * base[k, k] or base[k, k] <= 0:
                            state = self._fresh_state(base, mask, p)
                        else:
                            state = sweep(state, k)
                    else:
                        state = reverse_sweep(state, k)
            enumerated += 1
            if state is None:
                skipped += 1
                logger.debug("Modelo deficiente en rango omitido", extra={"mask": mask})
                continue

            included = [j for j in range(p) if mask >> j & 1]
            r2 = 1.0 - state[p, p] / sst if sst > 0 else 0.0
            r2 = min(max(r2, 0.0), 1.0)
            log_m = self._log_marginal(r2, len(included), n, g)

            if log_m > max_log:
                scale = np.exp(max_log - log_m) if np.isfinite(max_log) else 0.0
                total *= scale
                inclusion *= scale
                coef *= scale
                max_log = log_m
            w = np.exp(log_m - max_log)
            total += w
            if included:
                inclusion[included] += w
                coef[included] += w * shrink * state[included, p]

            key = (log_m, -mask)
            if len(retained) < retain or key > retained[0][0]:
                record = (key, mask, r2, state[included, p].copy(), -np.diag(state)[included].copy())
                if len(retained) < retain:
                    heapq.heappush(retained, record)
                else:
                    heapq.heapreplace(retained, record)

        return _SegmentSums(max_log, total, inclusion, coef, enumerated, skipped, retained)

    def bma_fit(
        self,
        X: np.ndarray | FeatureMatrix,
        y: np.ndarray,
        g: Optional[float] = None,
        seed: int = settings.DEFAULT_SEED,
        draws: int = settings.BMA_DRAWS,
        retain: int = settings.BMA_RETAINED_MODELS,
        threads: Optional[int] = None,
        labels: Optional[Sequence[str]] = None,
    ) -> BMAResult:
        """
        Promediado bayesiano por enumeración completa de los 2^p modelos.

        Args:
            X: Características n×p estandarizadas (p <= 25)
            y: Resultado (se centra internamente)
            g: Parámetro del prior de Zellner (por defecto n)
            seed: Semilla de las extracciones para los intervalos
            draws: Extracciones de la mezcla posterior (por defecto 10^4)
            retain: Modelos de mayor peso retenidos para los intervalos
            threads: Hilos para los segmentos
            labels: Nombres de las columnas

        Returns:
            BMAResult con probabilidades de inclusión, coeficientes promedio e intervalos del 95 %

        Raises:
            BMAServiceError: p > 25, dimensiones incompatibles o faltantes
        """
        if isinstance(X, FeatureMatrix):
            labels = labels or list(X.column_labels)
            X = X.values
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        n, p = X.shape
        if p > settings.BMA_MAX_FEATURES:
            raise BMAServiceError(f"p={p} supera el máximo de {settings.BMA_MAX_FEATURES} para enumeración completa")
        if y.shape[0] != n:
            raise BMAServiceError(f"X tiene {n} filas e y {y.shape[0]}")
        if n < 3:
            raise BMAServiceError("se necesitan al menos 3 observaciones")
        if np.isnan(X).any() or np.isnan(y).any():
            raise BMAServiceError("X e y no pueden tener faltantes")
        labels = list(labels) if labels else [f"x{j}" for j in range(p)]
        g = float(n) if g is None else float(g)
        if g <= 0:
            raise BMAServiceError(f"g debe ser positivo: {g}")

        Z = np.column_stack([X - X.mean(axis=0), y - y.mean()])
        base = Z.T @ Z

        total_models = 1 << p
        segment = 1 << min(p, SEGMENT_BITS)
        bounds = [(start, min(start + segment, total_models)) for start in range(0, total_models, segment)]
        logger.info("BMA iniciado", extra={"p": p, "n": n, "models": total_models, "segments": len(bounds)})
        parts: List[_SegmentSums] = []
        kept: List[tuple] = []
        for offset in range(0, len(bounds), SEGMENT_BATCH):
            batch = parallel_map(
                lambda b: self._run_segment(base, p, n, g, b[0], b[1], retain),
                bounds[offset:offset + SEGMENT_BATCH],
                threads,
            )
            # Solo los `retain` mejores modelos sobreviven entre lotes
            for part in batch:
                kept = heapq.nlargest(retain, kept + part.retained, key=lambda record: record[0])
                part.retained = []
            parts.extend(batch)

        max_log = max(part.max_log for part in parts)
        total = 0.0
        inclusion = np.zeros(p)
        coef = np.zeros(p)
        for part in parts:
            if not np.isfinite(part.max_log):
                continue
            scale = np.exp(part.max_log - max_log)
            total += part.total * scale
            inclusion += part.inclusion * scale
            coef += part.coef * scale
        if not np.isfinite(max_log) or total == 0:
            raise BMAServiceError("todos los modelos son deficientes en rango")

        merged = sorted(kept, key=lambda record: record[0], reverse=True)[:retain]
        log_normalizer = float(max_log + np.log(total))
        top_models = []
        for (log_m, _), mask, r2, ols, inverse_diag in merged:
            top_models.append(ModelRecord(
                included=tuple(j for j in range(p) if mask >> j & 1),
                log_marginal=float(log_m),
                r2=float(r2),
                ols_coef=ols,
                inverse_diag=inverse_diag,
                weight=float(np.exp(log_m - log_normalizer)),
            ))

        low, high = self._intervals(top_models, p, n, g, float(base[p, p]), seed, draws)
        skipped = sum(part.skipped for part in parts)
        if skipped:
            logger.warning("Modelos deficientes omitidos", extra={"skipped": skipped})
        result = BMAResult(
            labels=labels,
            inclusion_prob=np.clip(inclusion / total, 0.0, 1.0),
            avg_coef=coef / total,
            interval_low=low,
            interval_high=high,
            models_enumerated=sum(part.enumerated for part in parts),
            models_skipped=skipped,
            log_normalizer=log_normalizer,
            g=g,
            n=n,
            top_models=top_models,
        )
        logger.info("BMA completado", extra={"models": result.models_enumerated, "skipped": skipped})
        return result

    def _intervals(
        self, models: List[ModelRecord], p: int, n: int, g: float, sst: float, seed: int, draws: int
    ) -> tuple:
        """
        Intervalos del 95 % por muestreo de la mezcla de posteriores condicionales.

        Condicional a un modelo, cada coeficiente sigue una t de Student con n−1
        grados de libertad, centro shrink·β̂_OLS y escala² shrink·SST(1 − shrink·R²)/(n−1)·[(XᵀX)^{-1}]_jj.
        """
        shrink = g / (1.0 + g)
        weights = np.array([m.weight for m in models])
        weights = weights / weights.sum()
        centers = np.zeros((len(models), p))
        scales = np.zeros((len(models), p))
        for i, model in enumerate(models):
            if not model.included:
                continue
            idx = list(model.included)
            s2 = shrink * sst * (1.0 - shrink * model.r2) / (n - 1)
            centers[i, idx] = shrink * model.ols_coef
            scales[i, idx] = np.sqrt(np.clip(s2 * model.inverse_diag, 0.0, None))
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(models), size=draws, p=weights)
        noise = rng.standard_t(n - 1, size=(draws, p))
        samples = centers[chosen] + scales[chosen] * noise
        return np.percentile(samples, 2.5, axis=0), np.percentile(samples, 97.5, axis=0)

    def important_features(self, result: BMAResult, threshold: float = settings.BMA_THRESHOLD) -> List[SelectedFeature]:
        """Características con probabilidad de inclusión estrictamente mayor que el umbral."""
        return [
            SelectedFeature(
                index=j,
                label=result.labels[j],
                inclusion_prob=float(result.inclusion_prob[j]),
                avg_coef=float(result.avg_coef[j]),
                ci_low=float(result.interval_low[j]),
                ci_high=float(result.interval_high[j]),
            )
            for j in range(result.p)
            if result.inclusion_prob[j] > threshold
        ]

    def backproject(self, theta: np.ndarray, pca: PCAModel) -> np.ndarray:
        """
        Inversa de mínima norma β̂ = V_K θ.

        Raises:
            BMAServiceError: Si len(theta) != K
        """
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape[0] != pca.K:
            raise BMAServiceError(f"theta tiene {theta.shape[0]} entradas y K={pca.K}")
        return pca.axes @ theta

    def top_connections(
        self, beta: np.ndarray, labels: Sequence[str], m: int = settings.TOP_CONNECTIONS
    ) -> List[Tuple[str, float]]:
        """
        Las m conexiones con mayor |β̂|; empates por orden de etiqueta original.

        Raises:
            BMAServiceError: Si m > d o m < 1
        """
        beta = np.asarray(beta, dtype=float).ravel()
        if len(labels) != beta.shape[0]:
            raise BMAServiceError("etiquetas y coeficientes de longitud distinta")
        if not 1 <= m <= beta.shape[0]:
            raise BMAServiceError(f"m={m} fuera de rango [1, {beta.shape[0]}]")
        order = np.lexsort((np.arange(beta.shape[0]), -np.abs(beta)))[:m]
        return [(labels[i], float(beta[i])) for i in order]

    def pca_connection_coefficients(
        self,
        scores: np.ndarray,
        y: np.ndarray,
        pca: PCAModel,
        threshold: float = settings.BMA_THRESHOLD,
        m: int = settings.TOP_CONNECTIONS,
        seed: int = settings.DEFAULT_SEED,
        threads: Optional[int] = None,
    ) -> tuple:
        """
        BMA sobre puntuaciones PCA estandarizadas y retroproyección a conexiones.

        θ se restringe a las componentes importantes, se devuelve a la escala de
        las puntuaciones y se proyecta con β̂ = V_K θ.

        Returns:
            (BMAResult sobre las componentes, β̂ de longitud d, top-m conexiones)
        """
        scores = np.asarray(scores, dtype=float)
        sd = scores.std(axis=0, ddof=1)
        if np.any(sd == 0):
            raise BMAServiceError("componente principal de varianza cero")
        result = self.bma_fit(
            (scores - scores.mean(axis=0)) / sd,
            y,
            seed=seed,
            threads=threads,
            labels=[f"PC{k + 1}" for k in range(pca.K)],
        )
        theta = np.zeros(pca.K)
        for feature in self.important_features(result, threshold):
            theta[feature.index] = feature.avg_coef / sd[feature.index]
        beta = self.backproject(theta, pca)
        return result, beta, self.top_connections(beta, pca.labels, min(m, pca.d))

    def result_frame(self, result: BMAResult, threshold: float = settings.BMA_THRESHOLD) -> pd.DataFrame:
        return pd.DataFrame({
            "feature": result.labels,
            "inclusion_prob": result.inclusion_prob,
            "avg_coef": result.avg_coef,
            "ci_low": result.interval_low,
            "ci_high": result.interval_high,
            "selected": result.inclusion_prob > threshold,
        }, columns=RESULT_COLUMNS)

    def write_result(self, path: Path | str, result: BMAResult, threshold: float = settings.BMA_THRESHOLD) -> Path:
        """Escribe `feature,inclusion_prob,avg_coef,ci_low,ci_high,selected`."""
        return file_store.write_csv(path, self.result_frame(result, threshold))

    def models_frame(self, result: BMAResult) -> pd.DataFrame:
        """Modelos retenidos con su peso posterior (todos cuando 2^p <= el límite de retención)."""
        return pd.DataFrame({
            "model": [";".join(result.labels[j] for j in model.included) or "(null)" for model in result.top_models],
            "size": [len(model.included) for model in result.top_models],
            "r2": [model.r2 for model in result.top_models],
            "weight": [model.weight for model in result.top_models],
        })


# Instancia global del servicio
bma_service = BMAService()

"""
Servicio de estadística multivariante: PCA, CCA y prueba de Wilks.

Este módulo fornece:
- PCA por SVD de los datos centrados, con orientación determinista de los ejes
- CCA por SVD de la covarianza cruzada blanqueada (con ridge opcional)
- La prueba lambda de Wilks con la aproximación chi-cuadrado de Bartlett
- Correlaciones de cada rasgo con la primera variable canónica
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy import linalg, stats

from src.config import settings
from src.services.connectome_service import FeatureMatrix
from src.utils.error_handler import ComputationError, ValidationError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, FeatureMatrix]


class StatsServiceError(ValidationError):
    """Exceção personalizada para entradas inválidas do serviço estatístico."""
    pass


class SingularCovarianceError(ComputationError):
    """Covarianza singular sin regularización."""
    pass


def _values(X: ArrayLike) -> np.ndarray:
    values = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if np.isnan(values).any():
        raise StatsServiceError("la matriz contiene valores faltantes")
    return values


def _labels(X: ArrayLike, prefix: str) -> List[str]:
    if isinstance(X, FeatureMatrix):
        return list(X.column_labels)
    return [f"{prefix}{i}" for i in range(_values(X).shape[1])]


def _orient(columns: np.ndarray, reference: Optional[np.ndarray] = None) -> np.ndarray:
    """Signo tal que la entrada de mayor magnitud de cada columna de referencia sea positiva."""
    reference = columns if reference is None else reference
    idx = np.argmax(np.abs(reference), axis=0)
    signs = np.sign(reference[idx, np.arange(reference.shape[1])])
    signs[signs == 0] = 1.0
    return signs


@dataclass
class PCAModel:
    """Modelo PCA ajustado (ejes ortonormales en columnas de `axes`)."""
    column_means: np.ndarray
    axes: np.ndarray
    singular_values: np.ndarray
    n: int
    labels: List[str] = field(default_factory=list)

    @property
    def K(self) -> int:
        return int(self.axes.shape[1])

    @property
    def d(self) -> int:
        return int(self.axes.shape[0])

    @property
    def explained_variance(self) -> np.ndarray:
        return self.singular_values ** 2 / (self.n - 1)


@dataclass
class CCAModel:
    """Modelo CCA: cargas de X (p×m) y de Y (q×m) y correlaciones canónicas."""
    x_loadings: np.ndarray
    y_loadings: np.ndarray
    rho: np.ndarray
    x_means: np.ndarray
    y_means: np.ndarray
    ridge: float = 0.0
    x_labels: List[str] = field(default_factory=list)
    y_labels: List[str] = field(default_factory=list)

    @property
    def m(self) -> int:
        return int(self.rho.shape[0])


@dataclass
class WilksRow:
    """Resultado de la prueba de Wilks para las variables canónicas k..m."""
    k: int
    lam: float
    statistic: float
    df: int
    p_value: float
    infinite: bool = False


class StatsService:
    """Serviço de PCA, CCA e teste de Wilks."""

    def pca_fit(self, X: ArrayLike, K: int) -> PCAModel:
        """
        Ajusta PCA con K componentes sobre los datos centrados internamente.

        Args:
            X: Matriz n×d
            K: Número de componentes en [1, min(n−1, d)]

        Returns:
            PCAModel con valores singulares decrecientes

        Raises:
            StatsServiceError: K fuera de rango o datos degenerados
        """
        values = _values(X)
        n, d = values.shape
        if not 1 <= K <= min(n - 1, d):
            raise StatsServiceError(f"K={K} fuera de rango [1, {min(n - 1, d)}]")
        means = values.mean(axis=0)
        centered = values - means
        if not np.any(centered):
            raise StatsServiceError("datos degenerados: todas las filas son iguales")
        _, singular, vt = linalg.svd(centered, full_matrices=False)
        axes = vt[:K].T.copy()
        axes *= _orient(axes)
        logger.debug("PCA ajustado", extra={"n": n, "d": d, "K": K})
        return PCAModel(
            column_means=means, axes=axes, singular_values=singular[:K].copy(), n=n, labels=_labels(X, "x")
        )

    def pca_transform(self, model: PCAModel, X: ArrayLike) -> np.ndarray:
        """Puntuaciones (X − media)·V."""
        values = _values(X)
        if values.shape[1] != model.d:
            raise StatsServiceError(f"X tiene {values.shape[1]} columnas y el modelo {model.d}")
        return (values - model.column_means) @ model.axes

    def pca_reconstruct(self, model: PCAModel, scores: np.ndarray) -> np.ndarray:
        """Aproximación de rango K: puntuaciones·Vᵀ + media."""
        scores = np.asarray(scores, dtype=float)
        if scores.shape[1] != model.K:
            raise StatsServiceError(f"las puntuaciones tienen {scores.shape[1]} columnas y K={model.K}")
        return scores @ model.axes.T + model.column_means

    def pca_features(self, model: PCAModel, X: FeatureMatrix) -> FeatureMatrix:
        """Puntuaciones como FeatureMatrix con columnas PC1..PCK."""
        return FeatureMatrix(
            values=self.pca_transform(model, X),
            column_labels=[f"PC{k + 1}" for k in range(model.K)],
            row_labels=list(X.row_labels),
        )

    def _inverse_sqrt(self, cov: np.ndarray, ridge: float, name: str) -> np.ndarray:
        eigenvalues, eigenvectors = linalg.eigh(cov + ridge * np.eye(cov.shape[0]))
        if ridge == 0 and eigenvalues.min() <= settings.EIGEN_FLOOR:
            raise SingularCovarianceError(
                f"covarianza de {name} singular (autovalor mínimo {eigenvalues.min():.3e}); use ridge > 0"
            )
        eigenvalues = np.maximum(eigenvalues, settings.EIGEN_FLOOR)
        return (eigenvectors / np.sqrt(eigenvalues)) @ eigenvectors.T

    def cca_fit(self, X: ArrayLike, Y: ArrayLike, ridge: float = settings.CCA_RIDGE) -> CCAModel:
        """
        CCA por SVD de M = (Σxx+λI)^{-1/2} Σxy (Σyy+λI)^{-1/2}.

        Args:
            X: Características n×p (estandarizadas)
            Y: Rasgos n×q (estandarizados, sin faltantes)
            ridge: Regularización λ >= 0

        Returns:
            CCAModel con m = min(p, q) pares orientados

        Raises:
            StatsServiceError: Dimensiones inválidas
            SingularCovarianceError: Covarianza singular con ridge = 0
        """
        x, y = _values(X), _values(Y)
        if x.shape[0] != y.shape[0]:
            raise StatsServiceError(f"X tiene {x.shape[0]} filas e Y {y.shape[0]}")
        if ridge < 0:
            raise StatsServiceError(f"ridge debe ser >= 0: {ridge}")
        n, p = x.shape
        q = y.shape[1]
        if n <= max(p, q):
            raise StatsServiceError(f"se necesita n > max(p, q): n={n}, p={p}, q={q}")

        x_means, y_means = x.mean(axis=0), y.mean(axis=0)
        xc, yc = x - x_means, y - y_means
        sxx = xc.T @ xc / (n - 1)
        syy = yc.T @ yc / (n - 1)
        sxy = xc.T @ yc / (n - 1)
        wx = self._inverse_sqrt(sxx, ridge, "X")
        wy = self._inverse_sqrt(syy, ridge, "Y")

        u, singular, vt = linalg.svd(wx @ sxy @ wy, full_matrices=False)
        m = min(p, q)
        a = wx @ u[:, :m]
        b = wy @ vt[:m].T
        signs = _orient(b)
        rho = np.clip(singular[:m], 0.0, 1.0)
        logger.debug("CCA ajustado", extra={"n": n, "p": p, "q": q, "rho_1": float(rho[0])})
        return CCAModel(
            x_loadings=a * signs,
            y_loadings=b * signs,
            rho=rho,
            x_means=x_means,
            y_means=y_means,
            ridge=ridge,
            x_labels=_labels(X, "x"),
            y_labels=_labels(Y, "y"),
        )

    def canonical_variates(self, model: CCAModel, X: ArrayLike, Y: ArrayLike) -> tuple:
        """Variables canónicas r = (X − media)·A y s = (Y − media)·B."""
        return (_values(X) - model.x_means) @ model.x_loadings, (_values(Y) - model.y_means) @ model.y_loadings

    def wilks_test(self, model: CCAModel, n: int, p: int, q: int) -> List[WilksRow]:
        """
        Lambda de Wilks Λ_k = Π_{i>=k}(1 − ρ_i²) con la aproximación de Bartlett.

        Estadístico −(n − 1 − (p+q+1)/2)·ln Λ_k con (p−k+1)(q−k+1) grados de libertad.
        Si algún ρ_i = 1 el estadístico es infinito: p-valor 0 y `infinite` activado.

        Returns:
            Una fila por k = 1..m
        """
        scale = n - 1 - (p + q + 1) / 2
        rows = []
        for k in range(1, model.m + 1):
            tail = 1.0 - model.rho[k - 1:] ** 2
            lam = float(np.prod(tail))
            df = (p - k + 1) * (q - k + 1)
            if lam <= 0.0:
                rows.append(WilksRow(k=k, lam=0.0, statistic=float("inf"), df=df, p_value=0.0, infinite=True))
                continue
            statistic = max(0.0, -scale * float(np.log(lam)))
            rows.append(WilksRow(k=k, lam=lam, statistic=statistic, df=df, p_value=float(stats.chi2.sf(statistic, df))))
        return rows

    def trait_correlations(self, first_variate: np.ndarray, Y: ArrayLike) -> np.ndarray:
        """
        Correlación de Pearson de cada rasgo con la primera variable canónica de X.

        Raises:
            StatsServiceError: Longitudes distintas o varianza cero
        """
        variate = np.asarray(first_variate, dtype=float).ravel()
        y = _values(Y)
        if variate.shape[0] != y.shape[0]:
            raise StatsServiceError(f"la variable tiene {variate.shape[0]} valores y Y {y.shape[0]} filas")
        vc = variate - variate.mean()
        yc = y - y.mean(axis=0)
        y_norm = np.sqrt((yc ** 2).sum(axis=0))
        v_norm = np.sqrt((vc ** 2).sum())
        if v_norm == 0:
            raise StatsServiceError("la variable canónica tiene varianza cero")
        zero = np.flatnonzero(y_norm == 0)
        if zero.size:
            raise StatsServiceError(f"rasgo de varianza cero: {_labels(Y, 'y')[zero[0]]!r}")
        return np.clip((vc @ yc) / (v_norm * y_norm), -1.0, 1.0)


# Instancia global del servicio
stats_service = StatsService()

"""
Servicio de predicción con validación cruzada repetida.

Compara representaciones (árbol, PCA de la matriz de adyacencia) prediciendo
cada rasgo con un predictor base (media), regresión lineal (con ridge opcional)
y regresión por procesos gaussianos. Métricas sin escala: correlación entre
predicción y resultado, y porcentaje de mejora del MSE frente a la base.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from pydantic import ValidationError as PydanticValidationError
from scipy import linalg, optimize
from scipy.spatial.distance import cdist, pdist
from sklearn.model_selection import RepeatedKFold
from sklearn.preprocessing import StandardScaler

from src.config import settings
from src.dependencies import parallel_map
from src.services.connectome_service import FeatureMatrix
from src.utils.error_handler import ComputationError, ValidationError

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["representation", "regressor", "trait", "corr_mean", "corr_sd", "mse_impr_mean", "mse_impr_sd"]
JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
LOG_PARAM_BOUND = 12.0


class RegressionServiceError(ValidationError):
    """Exceção personalizada para entradas inválidas da validação cruzada."""
    pass


class SingularDesignError(ComputationError):
    """Ecuaciones normales singulares con ridge = 0."""
    pass


class GPError(ComputationError):
    """Matriz de kernel no definida positiva tras escalar el jitter."""
    pass


class CVConfig(BaseModel):
    """Configuración de la validación cruzada repetida."""
    folds: int = Field(default=settings.DEFAULT_FOLDS, ge=2)
    repeats: int = Field(default=settings.DEFAULT_REPEATS, ge=1)
    seed: int = settings.DEFAULT_SEED


class GPConfig(BaseModel):
    """Búsqueda de hiperparámetros del proceso gaussiano."""
    starts: int = Field(default=settings.GP_STARTS, ge=1)
    max_evals: int = Field(default=settings.GP_MAX_EVALS, ge=1)


def make_cv_config(**kwargs) -> CVConfig:
    """Construye CVConfig traduciendo errores de pydantic a errores de validación del toolkit."""
    try:
        return CVConfig(**kwargs)
    except PydanticValidationError as e:
        raise RegressionServiceError(f"configuración de validación cruzada inválida: {e}") from None


class Predictor(Protocol):
    def predict(self, X: np.ndarray) -> np.ndarray: ...


class Regressor(Protocol):
    """Contrato fit/predict para añadir predictores externos."""

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0) -> Predictor: ...


@dataclass
class ConstantPredictor:
    value: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], self.value, dtype=float)


@dataclass
class LinearPredictor:
    intercept: float
    coef: np.ndarray
    stderr: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coef


@dataclass
class GPPredictor:
    """Media posterior del GP con kernel exponencial cuadrático más ruido."""
    X_train: np.ndarray
    alpha: np.ndarray
    lengthscale: float
    signal: float
    noise: float
    y_mean: float
    y_scale: float
    log_marginal_likelihood: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        k_star = _se_kernel(np.asarray(X, dtype=float), self.X_train, self.lengthscale, self.signal)
        return self.y_mean + self.y_scale * (k_star @ self.alpha)


def _se_kernel(A: np.ndarray, B: np.ndarray, lengthscale: float, signal: float) -> np.ndarray:
    return signal ** 2 * np.exp(-0.5 * cdist(A, B, "sqeuclidean") / lengthscale ** 2)


def _cholesky_with_jitter(K: np.ndarray):
    """Cholesky con jitter creciente; None si ningún nivel funciona."""
    eye = np.eye(K.shape[0])
    for jitter in JITTER_LADDER:
        try:
            return linalg.cho_factor(K + jitter * eye, lower=True), jitter
        except linalg.LinAlgError:
            continue
    return None, None


class BaselineMean:
    """Predictor que devuelve la media de entrenamiento."""

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0) -> ConstantPredictor:
        return regression_service.baseline_mean(y)


@dataclass
class LinearRegressor:
    """Mínimos cuadrados con penalización ridge opcional (intercepto sin penalizar)."""
    ridge: float = 0.0

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0) -> LinearPredictor:
        return regression_service.fit_linear(X, y, self.ridge)


@dataclass
class GaussianProcessRegressor:
    config: GPConfig = field(default_factory=GPConfig)

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0) -> GPPredictor:
        return regression_service.fit_gp(X, y, self.config, seed)


@dataclass
class EvalRow:
    """Métricas de una combinación (representación, regresor, rasgo) sobre las repeticiones."""
    representation: str
    regressor: str
    trait: str
    corr_mean: float
    corr_sd: float
    mse_impr_mean: float
    mse_impr_sd: float
    mse_mean: float
    mse_sd: float
    n_subjects: int


@dataclass
class EvalReport:
    rows: List[EvalRow]
    config: CVConfig

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([[getattr(row, c) for c in REPORT_COLUMNS] for row in self.rows], columns=REPORT_COLUMNS)

    def get(self, representation: str, regressor: str, trait: str) -> EvalRow:
        for row in self.rows:
            if (row.representation, row.regressor, row.trait) == (representation, regressor, trait):
                return row
        raise KeyError((representation, regressor, trait))


def default_regressors(gp_config: Optional[GPConfig] = None) -> Dict[str, Regressor]:
    """Los regresores analizados: base, lineal, lineal con ridge y GP."""
    return {
        "baseline": BaselineMean(),
        "linear": LinearRegressor(ridge=0.0),
        "ridge": LinearRegressor(ridge=1.0),
        "gp": GaussianProcessRegressor(config=gp_config or GPConfig()),
    }


def select_regressors(
    names: Optional[Sequence[str]] = None, gp_config: Optional[GPConfig] = None
) -> Dict[str, Regressor]:
    """
    Subconjunto de los regresores por nombre, en el orden pedido.

    Raises:
        RegressionServiceError: Nombre desconocido o lista vacía
    """
    available = default_regressors(gp_config)
    if names is None:
        return available
    unknown = [name for name in names if name not in available]
    if unknown or not names:
        raise RegressionServiceError(
            f"regresores desconocidos: {unknown}; disponibles: {','.join(available)}"
        )
    return {name: available[name] for name in dict.fromkeys(names)}


class RegressionService:
    """Serviço de regressão e avaliação por validação cruzada."""

    def kfold_split(self, n: int, config: CVConfig) -> np.ndarray:
        """
        Particiones aleatorias con semilla: una fila por repetición con el fold de cada sujeto.

        Returns:
            Array (repeats, n) de enteros en [0, folds)

        Raises:
            RegressionServiceError: Si n < folds
        """
        if n < config.folds:
            raise RegressionServiceError(f"n={n} es menor que el número de folds ({config.folds})")
        splitter = RepeatedKFold(n_splits=config.folds, n_repeats=config.repeats, random_state=config.seed)
        assignment = np.empty((config.repeats, n), dtype=np.int64)
        for index, (_, test) in enumerate(splitter.split(np.zeros((n, 1)))):
            assignment[index // config.folds, test] = index % config.folds
        return assignment

    def baseline_mean(self, train_y: np.ndarray) -> ConstantPredictor:
        """Predictor constante igual a la media de entrenamiento."""
        train_y = np.asarray(train_y, dtype=float)
        if train_y.size == 0:
            raise RegressionServiceError("no hay observaciones de entrenamiento")
        return ConstantPredictor(float(train_y.mean()))

    def fit_linear(self, train_X: np.ndarray, train_y: np.ndarray, ridge: float = 0.0) -> LinearPredictor:
        """
        Regresión lineal por mínimos cuadrados (ridge opcional).

        Args:
            train_X: Características n×p (estandarizadas)
            train_y: Resultado
            ridge: Penalización >= 0

        Returns:
            LinearPredictor con coeficientes y errores estándar

        Raises:
            SingularDesignError: Ecuaciones normales singulares con ridge = 0
        """
        X = np.asarray(train_X, dtype=float)
        y = np.asarray(train_y, dtype=float)
        if X.shape[0] == 0:
            raise RegressionServiceError("no hay observaciones de entrenamiento")
        if ridge < 0:
            raise RegressionServiceError(f"ridge debe ser >= 0: {ridge}")
        x_mean, y_mean = X.mean(axis=0), y.mean()
        Xc, yc = X - x_mean, y - y_mean
        gram = Xc.T @ Xc
        n, p = X.shape
        if ridge == 0:
            singular = linalg.svdvals(Xc) if p else np.array([])
            if p and (singular.size < p or singular.min() <= 1e-10 * max(1.0, singular.max())):
                raise SingularDesignError("ecuaciones normales singulares; use ridge > 0")
        penalized = gram + ridge * np.eye(p)
        try:
            factor = linalg.cho_factor(penalized)
        except linalg.LinAlgError:
            raise SingularDesignError("ecuaciones normales no definidas positivas") from None
        coef = linalg.cho_solve(factor, Xc.T @ yc)
        residual = yc - Xc @ coef
        dof = n - p - 1
        if dof > 0:
            sigma2 = float(residual @ residual) / dof
            inverse = linalg.cho_solve(factor, np.eye(p))
            covariance = sigma2 * inverse @ gram @ inverse
            stderr = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
        else:
            stderr = np.full(p, np.nan)
        return LinearPredictor(intercept=float(y_mean - x_mean @ coef), coef=coef, stderr=stderr)

    def _negative_log_likelihood(self, log_params: np.ndarray, sq_dist: np.ndarray, y: np.ndarray) -> float:
        log_params = np.clip(log_params, -LOG_PARAM_BOUND, LOG_PARAM_BOUND)
        lengthscale, signal, noise = np.exp(log_params)
        K = signal ** 2 * np.exp(-0.5 * sq_dist / lengthscale ** 2) + noise ** 2 * np.eye(len(y))
        factor, _ = _cholesky_with_jitter(K)
        if factor is None:
            return np.inf
        alpha = linalg.cho_solve(factor, y)
        log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
        return float(0.5 * y @ alpha + 0.5 * log_det + 0.5 * len(y) * np.log(2 * np.pi))

    def fit_gp(
        self, train_X: np.ndarray, train_y: np.ndarray, params: Optional[GPConfig] = None, seed: int = 0
    ) -> GPPredictor:
        """
        Regresión GP con kernel exponencial cuadrático más ruido de observación.

        La escala de longitud parte de la mediana de distancias entre pares;
        (escala, señal, ruido) se optimizan maximizando la verosimilitud marginal
        con Nelder-Mead desde varios puntos de partida con semilla.

        Raises:
            GPError: Si el kernel final no es definido positivo ni con jitter 1e-4
        """
        params = params or GPConfig()
        X = np.asarray(train_X, dtype=float)
        y = np.asarray(train_y, dtype=float)
        if X.shape[0] == 0:
            raise RegressionServiceError("no hay observaciones de entrenamiento")
        y_mean = float(y.mean())
        y_scale = float(y.std()) or 1.0
        z = (y - y_mean) / y_scale

        distances = pdist(X) if X.shape[0] > 1 else np.array([])
        positive = distances[distances > 0]
        lengthscale0 = float(np.median(positive)) if positive.size else 1.0
        sq_dist = cdist(X, X, "sqeuclidean")

        rng = np.random.default_rng(seed)
        base = np.array([np.log(lengthscale0), 0.0, np.log(0.1)])
        best = None
        for start in range(params.starts):
            if start == 0:
                x0 = base
            else:
                x0 = base + np.array([rng.normal(0, 1), rng.normal(0, 1), 0.0])
                x0[2] = rng.uniform(np.log(1e-3), 0.0)
            result = optimize.minimize(
                self._negative_log_likelihood,
                x0,
                args=(sq_dist, z),
                method="Nelder-Mead",
                options={"maxfev": params.max_evals, "xatol": 1e-4, "fatol": 1e-8},
            )
            if np.isfinite(result.fun) and (best is None or result.fun < best.fun):
                best = result

        if best is None:
            raise GPError("ningún punto de partida produjo un kernel definido positivo")
        lengthscale, signal, noise = np.exp(np.clip(best.x, -LOG_PARAM_BOUND, LOG_PARAM_BOUND))
        K = signal ** 2 * np.exp(-0.5 * sq_dist / lengthscale ** 2) + noise ** 2 * np.eye(len(z))
        factor, jitter = _cholesky_with_jitter(K)
        if factor is None:
            raise GPError("matriz de kernel no definida positiva tras jitter 1e-4")
        if jitter > JITTER_LADDER[0]:
            logger.warning("Jitter escalado en el GP", extra={"jitter": jitter})
        return GPPredictor(
            X_train=X,
            alpha=linalg.cho_solve(factor, z),
            lengthscale=float(lengthscale),
            signal=float(signal),
            noise=float(noise),
            y_mean=y_mean,
            y_scale=y_scale,
            log_marginal_likelihood=-float(best.fun),
        )

    def cross_val_predict(
        self, X: np.ndarray, y: np.ndarray, regressor: Regressor, fold_ids: np.ndarray, seed: int = 0
    ) -> np.ndarray:
        """
        Predicciones fuera de fold de una repetición.

        Las características se estandarizan con media y escala de las filas de entrenamiento.
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        predictions = np.empty_like(y)
        for fold in np.unique(fold_ids):
            test = fold_ids == fold
            train = ~test
            scaler = StandardScaler().fit(X[train])
            predictor = regressor.fit(scaler.transform(X[train]), y[train], seed=seed + int(fold))
            predictions[test] = predictor.predict(scaler.transform(X[test]))
        return predictions

    def _metrics(self, y: np.ndarray, predicted: np.ndarray, baseline: np.ndarray) -> tuple:
        mse = float(np.mean((y - predicted) ** 2))
        mse_base = float(np.mean((y - baseline) ** 2))
        improvement = 100.0 * (mse_base - mse) / mse_base if mse_base > 0 else 0.0
        if np.std(predicted) == 0 or np.std(y) == 0:
            corr = 0.0
        else:
            corr = float(np.corrcoef(predicted, y)[0, 1])
        return corr, improvement, mse

    def evaluate(
        self,
        representations: Dict[str, FeatureMatrix],
        traits: FeatureMatrix,
        regressors: Optional[Dict[str, Regressor]] = None,
        config: Optional[CVConfig] = None,
        threads: Optional[int] = None,
    ) -> EvalReport:
        """
        Evalúa cada combinación (representación, regresor, rasgo) con CV repetida.

        Para cada rasgo se descartan los sujetos sin valor observado. En cada
        repetición se agrupan las predicciones fuera de fold; las métricas se
        promedian sobre repeticiones.

        Args:
            representations: Nombre -> características (filas alineadas con traits)
            traits: Rasgos (NaN = faltante)
            regressors: Nombre -> regresor (por defecto base, lineal, ridge y GP)
            config: Folds, repeticiones y semilla
            threads: Hilos máximos

        Returns:
            EvalReport ordenado por representación, regresor y rasgo
        """
        regressors = regressors if regressors is not None else default_regressors()
        config = config or CVConfig()
        for name, X in representations.items():
            if X.n != traits.n or X.row_labels != traits.row_labels:
                raise RegressionServiceError(f"la representación {name!r} no está alineada con los rasgos")

        plans = {}
        for t, trait in enumerate(traits.column_labels):
            observed = np.flatnonzero(~np.isnan(traits.values[:, t]))
            if observed.size < config.folds:
                raise RegressionServiceError(f"el rasgo {trait!r} tiene {observed.size} sujetos observados")
            plans[t] = (observed, self.kfold_split(observed.size, config))

        tasks = [
            (rep, reg, t, r)
            for rep in representations
            for reg in regressors
            for t in range(traits.d)
            for r in range(config.repeats)
        ]

        def _run(task):
            rep, reg, t, r = task
            observed, assignment = plans[t]
            X = representations[rep].values[observed]
            y = traits.values[observed, t]
            seed = config.seed * 1_000_003 + r * 1009 + t
            predicted = self.cross_val_predict(X, y, regressors[reg], assignment[r], seed)
            baseline = self.cross_val_predict(X, y, BaselineMean(), assignment[r], seed)
            return self._metrics(y, predicted, baseline)

        logger.info(
            "Validación cruzada iniciada",
            extra={"tasks": len(tasks), "folds": config.folds, "repeats": config.repeats, "seed": config.seed},
        )
        results = parallel_map(_run, tasks, threads)
        by_task = dict(zip(tasks, results))

        rows = []
        ddof = 1 if config.repeats > 1 else 0
        for rep in representations:
            for reg in regressors:
                for t, trait in enumerate(traits.column_labels):
                    metrics = np.array([by_task[(rep, reg, t, r)] for r in range(config.repeats)])
                    rows.append(EvalRow(
                        representation=rep,
                        regressor=reg,
                        trait=trait,
                        corr_mean=float(metrics[:, 0].mean()),
                        corr_sd=float(metrics[:, 0].std(ddof=ddof)),
                        mse_impr_mean=float(metrics[:, 1].mean()),
                        mse_impr_sd=float(metrics[:, 1].std(ddof=ddof)),
                        mse_mean=float(metrics[:, 2].mean()),
                        mse_sd=float(metrics[:, 2].std(ddof=ddof)),
                        n_subjects=int(plans[t][0].size),
                    ))
        return EvalReport(rows=rows, config=config)


# Instancia global del servicio
regression_service = RegressionService()

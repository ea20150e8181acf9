"""
Pruebas unitarias para regresión y validación cruzada repetida.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np
import pytest

from src.services.connectome_service import FeatureMatrix
from src.services.regression_service import (
    BaselineMean,
    GPConfig,
    LinearRegressor,
    RegressionServiceError,
    SingularDesignError,
    make_cv_config,
    regression_service,
    select_regressors,
)


@dataclass
class RecordingRegressor:
    """Regresor lineal que guarda los datos de cada ajuste."""
    calls: List[tuple] = field(default_factory=list)

    def fit(self, X, y, seed=0):
        self.calls.append((np.array(X, copy=True), np.array(y, copy=True)))
        return regression_service.fit_linear(X, y)


def _features(values, prefix="f"):
    values = np.asarray(values, dtype=float)
    return FeatureMatrix(
        values=values,
        column_labels=[f"{prefix}{j}" for j in range(values.shape[1])],
        row_labels=[f"s{i}" for i in range(values.shape[0])],
    )


@pytest.mark.unit
class TestKFoldSplit:
    """Pruebas de particiones con semilla."""

    def test_balanced_folds(self):
        """Prueba que cada repetición asigna folds de tamaño casi igual."""
        config = make_cv_config(folds=5, repeats=3, seed=1)
        assignment = regression_service.kfold_split(23, config)
        assert assignment.shape == (3, 23)
        for row in assignment:
            sizes = np.bincount(row, minlength=5)
            assert sizes.max() - sizes.min() <= 1

    def test_seeded(self):
        """Prueba que la misma semilla reproduce las particiones y otra las cambia."""
        a = regression_service.kfold_split(30, make_cv_config(folds=5, repeats=2, seed=4))
        b = regression_service.kfold_split(30, make_cv_config(folds=5, repeats=2, seed=4))
        c = regression_service.kfold_split(30, make_cv_config(folds=5, repeats=2, seed=5))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_too_few_subjects(self):
        """Prueba n menor que el número de folds."""
        with pytest.raises(RegressionServiceError, match="menor"):
            regression_service.kfold_split(3, make_cv_config(folds=5))

    def test_invalid_config(self):
        """Prueba folds < 2."""
        with pytest.raises(RegressionServiceError, match="inválida"):
            make_cv_config(folds=1)


@pytest.mark.unit
class TestLinear:
    """Pruebas de mínimos cuadrados."""

    def test_exact_recovery(self, rng):
        """Prueba la recuperación exacta de coeficientes sin ruido."""
        X = rng.normal(size=(30, 2))
        y = 1.0 + 2.0 * X[:, 0] - X[:, 1]
        model = regression_service.fit_linear(X, y)
        assert model.intercept == pytest.approx(1.0)
        assert np.allclose(model.coef, [2.0, -1.0])
        assert np.allclose(model.stderr, 0.0, atol=1e-8)
        assert np.allclose(model.predict(X), y)

    def test_ridge_shrinks(self, rng):
        """Prueba que la penalización reduce la norma de los coeficientes."""
        X = rng.normal(size=(30, 3))
        y = X @ np.array([1.0, -2.0, 0.5]) + rng.normal(size=30)
        plain = regression_service.fit_linear(X, y, ridge=0.0)
        shrunk = regression_service.fit_linear(X, y, ridge=50.0)
        assert np.linalg.norm(shrunk.coef) < np.linalg.norm(plain.coef)

    def test_singular_design(self, rng):
        """Prueba columnas colineales con y sin ridge."""
        x = rng.normal(size=(20, 1))
        X = np.hstack([x, 2 * x])
        y = rng.normal(size=20)
        with pytest.raises(SingularDesignError):
            regression_service.fit_linear(X, y, ridge=0.0)
        assert regression_service.fit_linear(X, y, ridge=1.0).coef.shape == (2,)

    def test_negative_ridge(self, rng):
        """Prueba una penalización negativa."""
        with pytest.raises(RegressionServiceError):
            regression_service.fit_linear(rng.normal(size=(5, 1)), rng.normal(size=5), ridge=-1.0)

    def test_baseline_mean(self):
        """Prueba el predictor constante."""
        predictor = regression_service.baseline_mean(np.array([1.0, 2.0, 6.0]))
        assert predictor.predict(np.zeros((2, 4))).tolist() == [3.0, 3.0]

    def test_baseline_empty(self):
        """Prueba el predictor base sin observaciones."""
        with pytest.raises(RegressionServiceError):
            regression_service.baseline_mean(np.array([]))


@pytest.mark.unit
class TestGaussianProcess:
    """Pruebas del GP con kernel exponencial cuadrático."""

    def test_fits_smooth_function(self):
        """Prueba que el GP aprende una función suave mejor que la media."""
        rng = np.random.default_rng(0)
        X = np.sort(rng.uniform(-3, 3, size=(40, 1)), axis=0)
        y = np.sin(X[:, 0]) + 0.05 * rng.normal(size=40)
        model = regression_service.fit_gp(X, y, GPConfig(starts=3, max_evals=150), seed=1)
        X_test = np.linspace(-2.5, 2.5, 25)[:, None]
        error = np.mean((model.predict(X_test) - np.sin(X_test[:, 0])) ** 2)
        assert error < 0.05
        assert model.lengthscale > 0 and model.noise > 0

    def test_seeded_restarts(self, rng):
        """Prueba que la misma semilla da el mismo ajuste."""
        X = rng.normal(size=(20, 2))
        y = X[:, 0] + 0.1 * rng.normal(size=20)
        config = GPConfig(starts=3, max_evals=60)
        a = regression_service.fit_gp(X, y, config, seed=7)
        b = regression_service.fit_gp(X, y, config, seed=7)
        assert a.lengthscale == b.lengthscale
        assert np.array_equal(a.alpha, b.alpha)

    def test_empty_training(self):
        """Prueba el GP sin observaciones."""
        with pytest.raises(RegressionServiceError):
            regression_service.fit_gp(np.zeros((0, 2)), np.zeros(0))


@pytest.mark.unit
class TestEvaluate:
    """Pruebas de la evaluación completa."""

    def test_baseline_improvement_is_zero(self, rng):
        """Prueba que el predictor base tiene mejora cero en cada repetición."""
        X = _features(rng.normal(size=(30, 2)))
        Y = _features(rng.normal(size=(30, 2)), prefix="t")
        report = regression_service.evaluate(
            {"tree": X}, Y, {"baseline": BaselineMean()}, make_cv_config(folds=5, repeats=3, seed=0), threads=1
        )
        for row in report.rows:
            assert row.mse_impr_mean == 0.0
            assert row.mse_impr_sd == 0.0

    def test_perfect_linear_predictor(self, rng):
        """Prueba que un rasgo lineal sin ruido se predice perfectamente."""
        values = rng.normal(size=(40, 2))
        X = _features(values)
        Y = _features((3.0 * values[:, 0] - values[:, 1])[:, None], prefix="t")
        report = regression_service.evaluate(
            {"tree": X}, Y, {"linear": LinearRegressor()}, make_cv_config(folds=5, repeats=2, seed=3)
        )
        row = report.get("tree", "linear", "t0")
        assert row.corr_mean == pytest.approx(1.0, abs=1e-8)
        assert row.mse_impr_mean == pytest.approx(100.0, abs=1e-6)

    def test_deterministic_across_threads(self, rng):
        """Prueba que el informe no depende del número de hilos."""
        X = _features(rng.normal(size=(25, 3)))
        Y = _features(rng.normal(size=(25, 2)), prefix="t")
        regressors = select_regressors(["baseline", "linear", "gp"], GPConfig(starts=2, max_evals=40))
        config = make_cv_config(folds=5, repeats=2, seed=9)
        one = regression_service.evaluate({"a": X, "b": X}, Y, regressors, config, threads=1)
        many = regression_service.evaluate({"a": X, "b": X}, Y, regressors, config, threads=4)
        assert one.to_frame().equals(many.to_frame())

    def test_row_order_and_missing(self, rng):
        """Prueba el orden de filas y la exclusión de sujetos sin rasgo."""
        X = _features(rng.normal(size=(20, 2)))
        traits = rng.normal(size=(20, 2))
        traits[:3, 1] = np.nan
        report = regression_service.evaluate(
            {"tree": X, "am_pca": X}, _features(traits, prefix="t"),
            select_regressors(["baseline", "ridge"]), make_cv_config(folds=4, repeats=1),
        )
        keys = [(r.representation, r.regressor, r.trait) for r in report.rows]
        assert keys[:2] == [("tree", "baseline", "t0"), ("tree", "baseline", "t1")]
        assert len(keys) == 8
        assert report.get("tree", "ridge", "t1").n_subjects == 17
        assert list(report.to_frame().columns)[:3] == ["representation", "regressor", "trait"]

    def test_misaligned(self, rng):
        """Prueba una representación con otras filas."""
        X = _features(rng.normal(size=(10, 2)))
        Y = _features(rng.normal(size=(9, 1)), prefix="t")
        with pytest.raises(RegressionServiceError, match="alineada"):
            regression_service.evaluate({"tree": X}, Y, {"baseline": BaselineMean()})

    def test_unknown_regressor(self):
        """Prueba un nombre de regresor desconocido."""
        with pytest.raises(RegressionServiceError, match="desconocidos"):
            select_regressors(["linear", "forest"])
        assert list(select_regressors(["gp", "baseline"])) == ["gp", "baseline"]


@pytest.mark.unit
class TestOutOfFoldIsolation:
    """Pruebas de que las filas de prueba no influyen en su propio fold."""

    FOLDS = np.array([0, 1, 2, 3] * 8)

    def test_held_out_outcome_ignored(self, rng):
        """Prueba que un valor extremo en y de prueba no cambia sus predicciones."""
        X = rng.normal(size=(32, 3))
        y = X @ np.array([1.0, -0.5, 0.25]) + 0.3 * rng.normal(size=32)
        marked = y.copy()
        marked[self.FOLDS == 0] = 1e9
        clean = regression_service.cross_val_predict(X, y, LinearRegressor(), self.FOLDS)
        dirty = regression_service.cross_val_predict(X, marked, LinearRegressor(), self.FOLDS)
        held_out = self.FOLDS == 0
        assert np.array_equal(clean[held_out], dirty[held_out])
        assert not np.allclose(clean[self.FOLDS == 1], dirty[self.FOLDS == 1])

    def test_held_out_features_ignored_by_scaler(self, rng):
        """Prueba que la estandarización y el ajuste usan solo filas de entrenamiento."""
        X = rng.normal(size=(32, 3))
        y = X[:, 0] + 0.3 * rng.normal(size=32)
        marked = X.copy()
        marked[self.FOLDS == 0] = 1e6
        clean, dirty = RecordingRegressor(), RecordingRegressor()
        regression_service.cross_val_predict(X, y, clean, self.FOLDS)
        regression_service.cross_val_predict(marked, y, dirty, self.FOLDS)

        train_X, train_y = dirty.calls[0]
        assert np.array_equal(train_X, clean.calls[0][0])
        assert np.array_equal(train_y, clean.calls[0][1])
        assert np.allclose(train_X.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(train_X.std(axis=0), 1.0)
        assert len(train_y) == 24
        # Los demás folds sí ven las filas marcadas en entrenamiento
        assert not np.allclose(dirty.calls[1][0], clean.calls[1][0])


@pytest.mark.unit
class TestMetricProperties:
    """Pruebas de las métricas sin escala."""

    CONFIG = make_cv_config(folds=5, repeats=3, seed=2)

    def test_affine_rescaling_of_outcome(self, rng):
        """Prueba que corr y mejora del MSE no cambian con y -> a·y + b."""
        values = rng.normal(size=(40, 3))
        y = values @ np.array([0.8, 0.0, -0.4]) + 0.5 * rng.normal(size=40)
        X = _features(values)
        regressors = select_regressors(["baseline", "linear", "ridge"])
        base = regression_service.evaluate({"tree": X}, _features(y[:, None], "t"), regressors, self.CONFIG)
        for scale, shift in ((250.0, -40.0), (-0.2, 3.0)):
            Y = _features((scale * y + shift)[:, None], "t")
            moved = regression_service.evaluate({"tree": X}, Y, regressors, self.CONFIG)
            for name in ("baseline", "linear"):
                a, b = base.get("tree", name, "t0"), moved.get("tree", name, "t0")
                assert b.corr_mean == pytest.approx(a.corr_mean, abs=1e-9)
                assert b.mse_impr_mean == pytest.approx(a.mse_impr_mean, abs=1e-7)
                assert b.mse_impr_sd == pytest.approx(a.mse_impr_sd, abs=1e-7)

    def test_pure_noise_does_not_improve(self, rng):
        """Prueba que sin señal la mejora del MSE no es positiva."""
        X = _features(rng.normal(size=(120, 4)))
        Y = _features(rng.normal(size=(120, 8)), prefix="t")
        report = regression_service.evaluate(
            {"tree": X}, Y, {"linear": LinearRegressor()}, make_cv_config(folds=5, repeats=5, seed=8)
        )
        improvements = np.array([row.mse_impr_mean for row in report.rows])
        assert improvements.mean() < 1.0
        assert improvements.max() < 10.0

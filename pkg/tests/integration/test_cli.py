"""
Pruebas de integración del CLI: cada subcomando sobre archivos reales en tmp_path.
"""

import json

import numpy as np
import pandas as pd
import pytest

from app import run
from tests.factories import FOUR_LEAF_TEXT, adjacency_csv, write_synth_config

SYNTH_ROWS = [
    ("n", "", "", 40),
    ("n_traits", "", "", 3),
    ("seed", "", "", 3),
    ("trait_noise_sd", "", "", 0.5),
    ("effect", "trait_00", "root", 1.0),
    ("missing", "trait_02", "", 0.05),
    ("desirability", "trait_00", "", "desirable"),
]


def _manifest(path):
    return json.loads(path.with_name(path.name + ".manifest.json").read_text(encoding="utf-8"))


@pytest.fixture
def hierarchy_file(tmp_path):
    path = tmp_path / "four_leaf.csv"
    path.write_text(FOUR_LEAF_TEXT, encoding="utf-8")
    return path


@pytest.fixture
def matrix_file(tmp_path):
    counts = np.array([[2, 3, 1, 0], [3, 1, 4, 2], [1, 4, 0, 5], [0, 2, 5, 3]])
    path = tmp_path / "s1.csv"
    path.write_text(adjacency_csv(counts), encoding="utf-8")
    return path


@pytest.fixture
def cohort_dir(tmp_path, hierarchy_file):
    config = write_synth_config(tmp_path / "synth.csv", SYNTH_ROWS)
    out_dir = tmp_path / "cohort"
    assert run(["synth", "--config", str(config), "--out-dir", str(out_dir), "-H", str(hierarchy_file)]) == 0
    return out_dir


@pytest.fixture
def built(tmp_path, hierarchy_file, cohort_dir):
    """Árboles y características de la cohorte sintética."""
    trees = tmp_path / "trees.csv"
    features = tmp_path / "features_tree.csv"
    am = tmp_path / "features_am.csv"
    code = run([
        "build", "--cohort", str(cohort_dir / "manifest.csv"), "-o", str(trees), "-H", str(hierarchy_file),
        "--features-out", str(features), "--am-features-out", str(am), "--threads", "2",
    ])
    assert code == 0
    return {"trees": trees, "features": features, "am": am, "traits": cohort_dir / "traits.csv"}


@pytest.mark.integration
class TestGeneralCLI:
    """Pruebas de argumentos y códigos de salida."""

    def test_version(self, capsys):
        """Prueba --version."""
        assert run(["--version"]) == 0
        assert "ctree" in capsys.readouterr().out

    def test_unknown_subcommand(self, capsys):
        """Prueba un subcomando inexistente."""
        assert run(["nada"]) == 1
        assert "ctree" in capsys.readouterr().err

    def test_missing_required_argument(self):
        """Prueba un argumento obligatorio ausente."""
        assert run(["build"]) == 1

    def test_missing_input_file(self, tmp_path, capsys):
        """Prueba una entrada inexistente."""
        code = run(["build", "-A", str(tmp_path / "nada.csv"), "-o", str(tmp_path / "t.csv")])
        assert code == 1
        assert "--adjacency" in capsys.readouterr().err
        assert not (tmp_path / "t.csv").exists()

    def test_out_of_range_parameter(self, tmp_path, built):
        """Prueba un parámetro fuera de rango."""
        code = run(["cv", "--features-tree", str(built["features"]), "--features-pca", str(built["features"]),
                    "--traits", str(built["traits"]), "--folds", "1", "--out", str(tmp_path / "cv.csv")])
        assert code == 1


@pytest.mark.integration
class TestBuild:
    """Pruebas de build y verify-theorem."""

    def test_single_subject(self, tmp_path, hierarchy_file, matrix_file):
        """Prueba el árbol de un sujeto y su manifiesto."""
        out = tmp_path / "trees.csv"
        assert run(["build", "-A", str(matrix_file), "-o", str(out), "-H", str(hierarchy_file)]) == 0
        frame = pd.read_csv(out)
        assert list(frame.columns) == ["subject_id", "node_name", "level", "weight"]
        weights = dict(zip(frame["node_name"], frame["weight"]))
        assert weights["root"] == 7
        assert weights["u"] == 3
        assert weights["v"] == 5
        manifest = _manifest(out)
        assert manifest["subcommand"] == "build"
        assert manifest["exit_status"] == 0
        assert manifest["seed"] is None
        assert set(manifest["inputs"]) == {"adjacency", "hierarchy"}

    def test_asymmetric_matrix(self, tmp_path, hierarchy_file, capsys):
        """Prueba que una matriz asimétrica termina con código 1."""
        counts = np.array([[0, 1, 0, 0], [2, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]])
        path = tmp_path / "bad.csv"
        path.write_text(adjacency_csv(counts), encoding="utf-8")
        assert run(["build", "-A", str(path), "-o", str(tmp_path / "t.csv"), "-H", str(hierarchy_file)]) == 1
        assert "asimétrica" in capsys.readouterr().err

    def test_cohort_outputs(self, built):
        """Prueba árboles, características y manifiestos de una cohorte."""
        trees = pd.read_csv(built["trees"])
        assert trees["subject_id"].nunique() == 40
        features = pd.read_csv(built["features"])
        assert list(features.columns) == ["subject_id", "root", "u", "v"]
        am = pd.read_csv(built["am"])
        assert am.shape == (40, 1 + 6)
        for path in built.values():
            if path.parent == built["trees"].parent:
                assert _manifest(path)["threads"] == 2

    def test_verify_theorem(self, tmp_path, hierarchy_file, matrix_file):
        """Prueba que el corango coincide con el peso en todos los nodos."""
        out = tmp_path / "verify.csv"
        assert run(["verify-theorem", "--matrix", str(matrix_file), "--out", str(out), "-H", str(hierarchy_file)]) == 0
        report = pd.read_csv(out)
        assert report["match"].all()
        assert list(report["weight"]) == list(report["corank"])

    def test_verify_budget_exceeded(self, tmp_path, hierarchy_file, matrix_file):
        """Prueba que superar el presupuesto de celdas termina con código 2."""
        out = tmp_path / "verify.csv"
        code = run(["verify-theorem", "--matrix", str(matrix_file), "--out", str(out),
                    "-H", str(hierarchy_file), "--budget", "3"])
        assert code == 2


@pytest.mark.integration
class TestSynth:
    """Pruebas de synth."""

    def test_files_and_manifests(self, cohort_dir):
        """Prueba los archivos de la cohorte y la semilla en el manifiesto."""
        for name in ("manifest.csv", "traits.csv", "ground_truth.csv", "constant_pairs.csv", "desirability.csv"):
            assert (cohort_dir / name).exists()
        assert len(list((cohort_dir / "adjacency").iterdir())) == 40
        assert _manifest(cohort_dir / "traits.csv")["seed"] == 3

    def test_threads_do_not_change_output(self, tmp_path, hierarchy_file):
        """Prueba que la cohorte no depende del número de hilos."""
        config = write_synth_config(tmp_path / "synth.csv", SYNTH_ROWS)
        for threads in ("1", "4"):
            code = run(["synth", "--config", str(config), "--out-dir", str(tmp_path / f"t{threads}"),
                        "-H", str(hierarchy_file), "--threads", threads])
            assert code == 0
        assert (tmp_path / "t1" / "traits.csv").read_bytes() == (tmp_path / "t4" / "traits.csv").read_bytes()
        assert (tmp_path / "t1" / "adjacency" / "sub0007.csv").read_bytes() == \
            (tmp_path / "t4" / "adjacency" / "sub0007.csv").read_bytes()

    def test_invalid_config(self, tmp_path, hierarchy_file, capsys):
        """Prueba una configuración con parámetro desconocido."""
        config = write_synth_config(tmp_path / "synth.csv", [("velocidad", "", "", 3)])
        code = run(["synth", "--config", str(config), "--out-dir", str(tmp_path / "o"), "-H", str(hierarchy_file)])
        assert code == 1
        assert "parámetro desconocido" in capsys.readouterr().err


@pytest.mark.integration
class TestAnalysis:
    """Pruebas de pca, cca, cv y bma sobre la cohorte sintética."""

    def test_pca(self, tmp_path, built):
        """Prueba puntuaciones y varianza explicada."""
        out = tmp_path / "pca.csv"
        assert run(["pca", "--features", str(built["am"]), "--k", "3", "--out", str(out)]) == 0
        scores = pd.read_csv(out)
        assert list(scores.columns) == ["subject_id", "PC1", "PC2", "PC3"]
        assert (tmp_path / "pca.variance.csv").exists()

    def test_pca_k_too_large(self, tmp_path, built):
        """Prueba K mayor que la dimensión."""
        assert run(["pca", "--features", str(built["am"]), "--k", "50", "--out", str(tmp_path / "pca.csv")]) == 1

    def test_threads_only_where_parallel(self, tmp_path, built, capsys):
        """Prueba que pca y cca no aceptan --threads y cv sí lo declara."""
        out = tmp_path / "pca.csv"
        assert run(["pca", "--features", str(built["am"]), "--k", "3", "--out", str(out), "--threads", "2"]) == 1
        assert "--threads" in capsys.readouterr().err
        assert not out.exists()
        assert run(["cca", "--features", str(built["features"]), "--traits", str(built["traits"]),
                    "--out", str(tmp_path / "cca.csv"), "--threads", "2"]) == 1
        assert run(["cv", "--help"]) == 0
        assert "--threads" in capsys.readouterr().out

    def test_cca_and_plot(self, tmp_path, built, cohort_dir):
        """Prueba la CCA del árbol contra los rasgos y su figura."""
        out = tmp_path / "cca.csv"
        assert run(["cca", "--features", str(built["features"]), "--traits", str(built["traits"]),
                    "--out", str(out)]) == 0
        table = pd.read_csv(out)
        assert list(table.columns) == ["table", "row", "column", "value"]
        svg = tmp_path / "cca.svg"
        assert run(["plot", "cca", "--in", str(out), "--desirability", str(cohort_dir / "desirability.csv"),
                    "--out", str(svg)]) == 0
        assert "<svg " in svg.read_text(encoding="utf-8")
        assert _manifest(svg)["subcommand"] == "plot cca"

    def test_cv(self, tmp_path, built):
        """Prueba el reporte de validación cruzada reducido."""
        pca = tmp_path / "pca.csv"
        assert run(["pca", "--features", str(built["am"]), "--k", "3", "--out", str(pca)]) == 0
        out = tmp_path / "cv.csv"
        code = run([
            "cv", "--features-tree", str(built["features"]), "--features-pca", str(pca),
            "--traits", str(built["traits"]), "--folds", "3", "--repeats", "2", "--seed", "5",
            "--regressors", "baseline,linear", "--out", str(out),
        ])
        assert code == 0
        report = pd.read_csv(out)
        assert set(report["regressor"]) == {"baseline", "linear"}
        assert _manifest(out)["seed"] == 5

    def test_bma_features(self, tmp_path, built):
        """Prueba BMA sobre las características del árbol."""
        out = tmp_path / "bma.csv"
        code = run(["bma", "--features", str(built["features"]), "--traits", str(built["traits"]),
                    "--trait", "trait_00", "--out", str(out)])
        assert code == 0
        frame = pd.read_csv(out)
        assert list(frame["feature"]) == ["root", "u", "v"]
        assert frame["inclusion_prob"].between(0, 1).all()

    def test_bma_connections(self, tmp_path, built):
        """Prueba BMA sobre PCA con retroproyección a conexiones."""
        out = tmp_path / "bma_am.csv"
        code = run(["bma", "--connections", str(built["am"]), "--traits", str(built["traits"]),
                    "--trait", "trait_00", "--k", "3", "--top", "4", "--out", str(out)])
        assert code == 0
        assert (tmp_path / "bma_am.connections.csv").exists()

    def test_bma_unknown_trait(self, tmp_path, built):
        """Prueba un rasgo inexistente."""
        code = run(["bma", "--features", str(built["features"]), "--traits", str(built["traits"]),
                    "--trait", "trait_99", "--out", str(tmp_path / "bma.csv")])
        assert code == 1


@pytest.mark.integration
class TestPlots:
    """Pruebas de plot chord y plot tree."""

    def test_chord_mean_tree(self, tmp_path, built, hierarchy_file):
        """Prueba el diagrama de cuerdas del árbol medio."""
        out = tmp_path / "chord.svg"
        assert run(["plot", "chord", "--in", str(built["trees"]), "-H", str(hierarchy_file), "--out", str(out)]) == 0
        assert 'data-node="root"' in out.read_text(encoding="utf-8")

    def test_chord_unknown_subject(self, tmp_path, built, hierarchy_file):
        """Prueba un sujeto inexistente."""
        code = run(["plot", "chord", "--in", str(built["trees"]), "-H", str(hierarchy_file),
                    "--subject", "nadie", "--out", str(tmp_path / "c.svg")])
        assert code == 1

    def test_tree_contrast(self, tmp_path, built, hierarchy_file):
        """Prueba el contraste de extremos de un rasgo."""
        out = tmp_path / "tree.svg"
        code = run(["plot", "tree", "--in", str(built["trees"]), "-H", str(hierarchy_file),
                    "--traits", str(built["traits"]), "--trait", "trait_00", "--fraction", "0.2", "--out", str(out)])
        assert code == 0
        assert "%" in out.read_text(encoding="utf-8")

    def test_tree_traits_without_trait(self, tmp_path, built, hierarchy_file):
        """Prueba --traits sin --trait."""
        code = run(["plot", "tree", "--in", str(built["trees"]), "-H", str(hierarchy_file),
                    "--traits", str(built["traits"]), "--out", str(tmp_path / "t.svg")])
        assert code == 1

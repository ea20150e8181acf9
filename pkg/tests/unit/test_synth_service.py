"""
Pruebas unitarias para el generador de cohortes sintéticas.
"""

import numpy as np
import pytest

from src.services.connectome_service import connectome_service
from src.services.synth_service import SynthServiceError, make_synth_config, synth_service
from src.services.tree_service import tree_service


@pytest.mark.unit
class TestGenerateCohort:
    """Pruebas de generación determinista y de la señal plantada."""

    def test_shapes(self, small_synth_cohort):
        """Prueba dimensiones, identificadores y simetría."""
        cohort = small_synth_cohort
        assert len(cohort.matrices) == 60
        assert cohort.matrices[0].subject_id == "sub0000"
        assert cohort.traits.column_labels == ["trait_00", "trait_01", "trait_02"]
        for A in cohort.matrices[:5]:
            assert np.array_equal(A.counts, A.counts.T)
            assert A.roi_names == ["a", "b", "c", "d"]

    def test_independent_of_threads(self, small_synth_config):
        """Prueba que la cohorte no depende del número de hilos."""
        one = synth_service.generate_cohort(small_synth_config, threads=1)
        many = synth_service.generate_cohort(small_synth_config, threads=4)
        for a, b in zip(one.matrices, many.matrices):
            assert np.array_equal(a.counts, b.counts)
        assert np.array_equal(one.traits.values, many.traits.values, equal_nan=True)

    def test_seed_changes_cohort(self, small_synth_config):
        """Prueba que otra semilla produce otra cohorte."""
        other = small_synth_config.model_copy(update={"seed": 4})
        a = synth_service.generate_cohort(small_synth_config, threads=1)
        b = synth_service.generate_cohort(other, threads=1)
        assert not np.array_equal(a.matrices[0].counts, b.matrices[0].counts)

    def test_planted_signal(self, four_leaf_hierarchy, small_synth_cohort):
        """Prueba que el rasgo plantado se correlaciona con el peso de la raíz."""
        trees = tree_service.build_cohort_trees(four_leaf_hierarchy, small_synth_cohort.matrices, threads=1)
        root = np.array([t.weight_by_name("root") for t in trees], dtype=float)
        trait = small_synth_cohort.traits.column("trait_00")
        assert np.corrcoef(root, trait)[0, 1] > 0.5

    def test_missing_fraction(self, small_synth_cohort):
        """Prueba el número exacto de faltantes por rasgo."""
        traits = small_synth_cohort.traits
        assert int(np.isnan(traits.column("trait_02")).sum()) == 3
        assert int(np.isnan(traits.column("trait_00")).sum()) == 0
        assert small_synth_cohort.truth.missing_counts["trait_02"] == 3

    def test_ground_truth(self, small_synth_cohort):
        """Prueba los efectos plantados emitidos."""
        truth = small_synth_cohort.truth
        assert truth.effects == [("trait_00", "root", 1.0)]
        assert truth.planted_traits() == ["trait_00"]
        assert truth.latents.shape == (60, 3)
        assert list(truth.frame().columns) == ["trait", "node_name", "effect"]

    def test_constant_pairs(self, four_leaf_hierarchy):
        """Prueba que los pares constantes valen cero en todos los sujetos y cruzan la raíz."""
        config = make_synth_config(n=20, hierarchy=four_leaf_hierarchy, n_traits=1, zero_variance_pairs=2, seed=1)
        cohort = synth_service.generate_cohort(config, threads=2)
        assert len(cohort.truth.zero_variance_pairs) == 2
        for a, b in cohort.truth.zero_variance_pairs:
            assert (a, b) in {(0, 2), (0, 3), (1, 2), (1, 3)}
            assert all(A.counts[a, b] == 0 for A in cohort.matrices)

    def test_too_many_constant_pairs(self, four_leaf_hierarchy):
        """Prueba más pares constantes que candidatos."""
        config = make_synth_config(n=5, hierarchy=four_leaf_hierarchy, zero_variance_pairs=5)
        with pytest.raises(SynthServiceError, match="supera"):
            synth_service.generate_cohort(config)

    def test_invalid_config(self, four_leaf_hierarchy):
        """Prueba valores fuera de rango."""
        with pytest.raises(SynthServiceError, match="inválida"):
            make_synth_config(n=1, hierarchy=four_leaf_hierarchy)
        with pytest.raises(SynthServiceError):
            make_synth_config(hierarchy=four_leaf_hierarchy, missing_fraction={"trait_00": 1.5})

    def test_write_and_reload(self, tmp_path, small_synth_cohort):
        """Prueba que la cohorte escrita se relee con el manifiesto."""
        written = synth_service.write_cohort(tmp_path / "cohort", small_synth_cohort)
        assert set(written) >= {"manifest", "traits", "ground_truth", "constant_pairs"}
        cohort = connectome_service.load_cohort(written["manifest"], threads=1)
        assert [A.subject_id for A in cohort] == [A.subject_id for A in small_synth_cohort.matrices]
        assert np.array_equal(cohort[7].counts, small_synth_cohort.matrices[7].counts)
        traits = connectome_service.load_traits(written["traits"])
        assert np.array_equal(traits.values, small_synth_cohort.traits.values, equal_nan=True)


@pytest.mark.unit
class TestParseSynthConfig:
    """Pruebas del CSV de configuración sintética."""

    def test_full_config(self, four_leaf_hierarchy):
        """Prueba parámetros escalares, efectos, faltantes y deseabilidad."""
        text = (
            "parameter,trait,node,value\n"
            "# comentario\n"
            "n,,,40\n"
            "n_traits,,,2\n"
            "base_rate,,,12.5\n"
            "seed,,,9\n"
            "effect,trait_00,u,0.8\n"
            "effect,trait_01,root,-0.5\n"
            "missing,trait_01,,0.05\n"
            "desirability,trait_00,,desirable\n"
        )
        config = synth_service.parse_synth_config(text, four_leaf_hierarchy)
        assert config.n == 40 and config.n_traits == 2 and config.seed == 9
        assert config.base_rate == 12.5
        assert config.signal_nodes == {1: {"trait_00": 0.8}, 0: {"trait_01": -0.5}}
        assert config.missing_fraction == {"trait_01": 0.05}
        assert config.desirability == {"trait_00": "desirable"}

    def test_bad_header(self, four_leaf_hierarchy):
        """Prueba una cabecera incorrecta."""
        with pytest.raises(SynthServiceError, match="cabecera"):
            synth_service.parse_synth_config("name,value\nn,3\n", four_leaf_hierarchy)

    def test_unknown_parameter(self, four_leaf_hierarchy):
        """Prueba un parámetro desconocido con su fila."""
        text = "parameter,trait,node,value\nspeed,,,3\n"
        with pytest.raises(SynthServiceError, match="fila 2"):
            synth_service.parse_synth_config(text, four_leaf_hierarchy)

    def test_unknown_trait(self, four_leaf_hierarchy):
        """Prueba un rasgo fuera de n_traits."""
        text = "parameter,trait,node,value\nn_traits,,,1\neffect,trait_03,root,1\n"
        with pytest.raises(SynthServiceError, match="trait_03"):
            synth_service.parse_synth_config(text, four_leaf_hierarchy)

    def test_effect_on_leaf(self, four_leaf_hierarchy):
        """Prueba un efecto plantado en una hoja."""
        text = "parameter,trait,node,value\neffect,trait_00,a,1\n"
        with pytest.raises(SynthServiceError, match="nodo interno"):
            synth_service.parse_synth_config(text, four_leaf_hierarchy)

    def test_non_numeric_value(self, four_leaf_hierarchy):
        """Prueba un valor escalar no numérico."""
        text = "parameter,trait,node,value\nn,,,muchos\n"
        with pytest.raises(SynthServiceError, match="valor inválido"):
            synth_service.parse_synth_config(text, four_leaf_hierarchy)

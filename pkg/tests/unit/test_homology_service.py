"""
Pruebas unitarias para el oráculo exacto de homología.
"""

import numpy as np
import pytest

from src.services.atlas_service import atlas_service
from src.services.connectome_service import AdjacencyMatrix
from src.services.homology_service import (
    ChainComplex,
    ChainMap,
    HomologyService,
    HomologyServiceError,
    OneCell,
    OracleBudgetError,
    homology_service,
)
from src.services.tree_service import tree_service
from tests.factories import random_counts, random_hierarchy_text


@pytest.mark.unit
class TestChainComplex:
    """Pruebas de rangos de homología sobre complejos pequeños."""

    def test_triangle(self):
        """Prueba un triángulo: H_0 = 1 y H_1 = 1."""
        C = ChainComplex(
            zero_cells=["x", "y", "z"],
            one_cells=[OneCell("e1", "x", "y"), OneCell("e2", "y", "z"), OneCell("e3", "z", "x")],
        )
        assert homology_service.homology_rank(C, 0) == 1
        assert homology_service.homology_rank(C, 1) == 1
        assert len(homology_service.homology_basis(C)) == 1

    def test_bouquet_of_loops(self):
        """Prueba un punto con tres lazos: H_1 = 3."""
        C = ChainComplex(zero_cells=["x"], one_cells=[OneCell(f"l{i}", "x", "x") for i in range(3)])
        assert homology_service.homology_rank(C, 0) == 1
        assert homology_service.homology_rank(C, 1) == 3

    def test_disjoint_points(self):
        """Prueba puntos aislados: H_0 cuenta componentes."""
        C = ChainComplex(zero_cells=["a", "b", "c"])
        assert homology_service.homology_rank(C, 0) == 3
        assert homology_service.homology_rank(C, 1) == 0

    def test_basis_is_in_kernel(self):
        """Prueba que cada vector de la base es un ciclo."""
        C = ChainComplex(
            zero_cells=["x", "y"],
            one_cells=[OneCell("e1", "x", "y"), OneCell("e2", "x", "y"), OneCell("l", "x", "x")],
        )
        basis = homology_service.homology_basis(C)
        assert len(basis) == 2
        for vector in basis:
            total = {}
            for j, value in vector.items():
                for i, b in C.cell_boundary(C.one_cells[j]).items():
                    total[i] = total.get(i, 0) + value * b
            assert all(v == 0 for v in total.values())

    def test_unsupported_degree(self):
        """Prueba un grado distinto de 0 y 1."""
        with pytest.raises(HomologyServiceError):
            homology_service.homology_rank(ChainComplex(zero_cells=["x"]), 2)

    def test_dangling_cell(self):
        """Prueba una 1-celda con extremo inexistente."""
        with pytest.raises(HomologyServiceError, match="extremo"):
            ChainComplex(zero_cells=["x"], one_cells=[OneCell("e", "x", "y")])

    def test_non_commuting_map(self):
        """Prueba que un morfismo que no respeta el borde se detecta."""
        domain = ChainComplex(zero_cells=["a", "b"], one_cells=[OneCell("e", "a", "b")])
        codomain = ChainComplex(zero_cells=["x", "y"], one_cells=[OneCell("e", "x", "x")])
        chain_map = ChainMap(domain, codomain, {"a": "x", "b": "y"}, {"e": "e"})
        assert not chain_map.commutes()


@pytest.mark.unit
class TestCorank:
    """Pruebas de la igualdad corango = peso del árbol."""

    def test_four_leaf(self, four_leaf_hierarchy, four_leaf_matrix):
        """Prueba corango en cada nodo interno del ejemplo de cuatro hojas."""
        assert homology_service.corank(four_leaf_hierarchy, four_leaf_matrix, 0) == 7
        assert homology_service.corank(four_leaf_hierarchy, four_leaf_matrix, 1) == 3
        assert homology_service.corank(four_leaf_hierarchy, four_leaf_matrix, 2) == 5

    def test_rank_accounting(self, four_leaf_hierarchy, four_leaf_matrix):
        """Prueba la contabilidad H_1(padre) = imagen + corango."""
        detail = homology_service.corank_detail(four_leaf_hierarchy, four_leaf_matrix, 0)
        # Diagonal 2+1+0+3 más fibras 3+1+0+4+2+5
        assert detail.parent_h1 == 21
        assert detail.children_h1 == detail.image_rank == 14
        assert detail.corank == 7

    def test_induced_map_commutes(self, four_leaf_hierarchy, four_leaf_matrix):
        """Prueba que el morfismo inducido conmuta con el borde."""
        children = homology_service.build_children_complex(four_leaf_hierarchy, four_leaf_matrix, 0)
        parent = homology_service.build_parent_complex(four_leaf_hierarchy, four_leaf_matrix, 0)
        assert children.zero_cells == ["u", "v"]
        assert homology_service.induced_map(children, parent).commutes()

    def test_zero_matrix(self, four_leaf_hierarchy):
        """Prueba que sin fibras el corango es cero."""
        A = AdjacencyMatrix("z", np.zeros((4, 4), dtype=int))
        assert homology_service.corank(four_leaf_hierarchy, A, 0) == 0

    def test_verify_dk(self, dk_hierarchy):
        """Prueba la verificación completa sobre el atlas DK con conteos pequeños."""
        A = AdjacencyMatrix("dk", random_counts(np.random.default_rng(11), dk_hierarchy.p, 2))
        rows = homology_service.verify_theorem(dk_hierarchy, A, threads=2)
        assert len(rows) == 23
        assert all(row.match for row in rows)
        tree = tree_service.build_tree(dk_hierarchy, A)
        assert [row.weight for row in rows] == [tree.weights[n] for n in atlas_service.internal_nodes(dk_hierarchy)]

    def test_verify_random_hierarchies(self, rng):
        """Prueba la verificación sobre jerarquías aleatorias."""
        for _ in range(5):
            h = atlas_service.parse_hierarchy(random_hierarchy_text(rng, max_depth=4, max_leaves=12))
            A = AdjacencyMatrix("r", random_counts(rng, h.p, 4))
            assert all(row.match for row in homology_service.verify_theorem(h, A, threads=1))

    def test_leaf_rejected(self, four_leaf_hierarchy, four_leaf_matrix):
        """Prueba que una hoja no tiene complejo de hijos."""
        with pytest.raises(HomologyServiceError, match="hoja"):
            homology_service.corank(four_leaf_hierarchy, four_leaf_matrix, 3)

    def test_real_valued_rejected(self, four_leaf_hierarchy, four_leaf_matrix):
        """Prueba que el oráculo rechaza conectividad ponderada."""
        A = AdjacencyMatrix("w", four_leaf_matrix.counts * 0.5)
        with pytest.raises(HomologyServiceError, match="enteros"):
            homology_service.verify_theorem(four_leaf_hierarchy, A)

    def test_budget(self, four_leaf_hierarchy, four_leaf_matrix):
        """Prueba que un presupuesto pequeño produce un error de cálculo."""
        small = HomologyService(cell_budget=10)
        with pytest.raises(OracleBudgetError, match="presupuesto 10"):
            small.corank(four_leaf_hierarchy, four_leaf_matrix, 0)
        assert small.corank(four_leaf_hierarchy, four_leaf_matrix, 1) == 3


@pytest.mark.unit
@pytest.mark.slow
class TestOracleAtScale:
    """Equivalencia corango = peso sobre muchas matrices con conteos 0..20."""

    def test_dk_matrices(self, dk_hierarchy):
        """Prueba 200 matrices aleatorias sobre el atlas DK."""
        rng = np.random.default_rng(2024)
        for index in range(200):
            A = AdjacencyMatrix(f"dk{index}", random_counts(rng, dk_hierarchy.p, 20))
            rows = homology_service.verify_theorem(dk_hierarchy, A, threads=4)
            assert len(rows) == 23
            assert all(row.match for row in rows), index

    def test_random_hierarchies(self):
        """Prueba 200 jerarquías aleatorias (2-6 hijos, profundidad <= 5)."""
        rng = np.random.default_rng(2025)
        for index in range(200):
            h = atlas_service.parse_hierarchy(random_hierarchy_text(rng, max_depth=5, max_leaves=40))
            A = AdjacencyMatrix(f"r{index}", random_counts(rng, h.p, 20))
            rows = homology_service.verify_theorem(h, A, threads=4)
            assert rows
            assert all(row.match for row in rows), index

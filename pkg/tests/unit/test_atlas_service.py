"""
Pruebas unitarias para el servicio de atlas (jerarquías de regiones).
"""

import numpy as np
import pytest

from src.services.atlas_service import AtlasServiceError, HierarchyParseError, atlas_service
from src.utils.error_handler import ValidationError
from tests.factories import FOUR_LEAF_TEXT, random_hierarchy_text


@pytest.mark.unit
class TestParseHierarchy:
    """Pruebas de parseo y validación del CSV de jerarquía."""

    def test_four_leaf_structure(self, four_leaf_hierarchy):
        """Prueba hojas, niveles y conteos por nivel."""
        h = four_leaf_hierarchy
        assert h.p == 4
        assert h.L == 3
        assert h.level_counts == {1: 1, 2: 2, 3: 4}
        assert h.root.name == "root"
        assert h.children(0) == (1, 2)

    def test_dk_structural_constants(self, dk_hierarchy):
        """Prueba las constantes del atlas DK: 68 hojas, 91 nodos, 23 internos."""
        assert dk_hierarchy.p == 68
        assert len(dk_hierarchy.nodes) == 91
        assert len(atlas_service.internal_nodes(dk_hierarchy)) == 23
        assert dk_hierarchy.root.name == "brain"

    def test_round_trip(self, dk_hierarchy):
        """Prueba que serializar y volver a parsear da la misma jerarquía."""
        text = atlas_service.serialize_hierarchy(dk_hierarchy)
        assert atlas_service.parse_hierarchy(text) == dk_hierarchy

    def test_comments_and_blank_lines_ignored(self):
        """Prueba que los comentarios y líneas vacías no cuentan."""
        text = "# cabecera\n\n" + FOUR_LEAF_TEXT + "\n# fin\n"
        assert atlas_service.parse_hierarchy(text).p == 4

    def test_single_node_hierarchy(self):
        """Prueba la jerarquía mínima: una raíz hoja."""
        h = atlas_service.parse_hierarchy("node_id,name,parent_id,level,roi_index\n0,only,,1,0\n")
        assert h.p == 1
        assert atlas_service.internal_nodes(h) == []

    def test_missing_header(self):
        """Prueba cabecera inválida con número de línea."""
        with pytest.raises(HierarchyParseError) as exc:
            atlas_service.parse_hierarchy("id,name\n0,root\n")
        assert exc.value.line_number == 1

    def test_duplicate_roi_reports_line(self):
        """Prueba roi_index duplicado con la línea del segundo uso."""
        text = FOUR_LEAF_TEXT.replace("6,d,2,3,3", "6,d,2,3,2")
        with pytest.raises(HierarchyParseError, match="roi_index duplicado") as exc:
            atlas_service.parse_hierarchy(text)
        assert exc.value.line_number == 9

    def test_orphan_parent(self):
        """Prueba parent_id inexistente."""
        text = FOUR_LEAF_TEXT.replace("6,d,2,3,3", "6,d,9,3,3")
        with pytest.raises(HierarchyParseError, match="huérfano"):
            atlas_service.parse_hierarchy(text)

    def test_two_roots(self):
        """Prueba que dos raíces se rechazan."""
        text = FOUR_LEAF_TEXT + "7,other,,1,\n"
        with pytest.raises(HierarchyParseError, match="exactamente una raíz"):
            atlas_service.parse_hierarchy(text)

    def test_level_mismatch(self):
        """Prueba nivel incoherente con el padre."""
        text = FOUR_LEAF_TEXT.replace("3,a,1,3,0", "3,a,1,4,0")
        with pytest.raises(HierarchyParseError, match="incoherente"):
            atlas_service.parse_hierarchy(text)

    def test_roi_on_internal_node(self):
        """Prueba roi_index en un nodo con hijos."""
        text = FOUR_LEAF_TEXT.replace("1,u,0,2,", "1,u,0,2,7")
        with pytest.raises(HierarchyParseError, match="nodo interno"):
            atlas_service.parse_hierarchy(text)

    def test_leaf_without_roi(self):
        """Prueba hoja sin roi_index."""
        text = FOUR_LEAF_TEXT.replace("6,d,2,3,3", "6,d,2,3,")
        with pytest.raises(HierarchyParseError, match="no tiene roi_index"):
            atlas_service.parse_hierarchy(text)

    def test_non_contiguous_roi(self):
        """Prueba índices de ROI fuera de [0, p)."""
        text = FOUR_LEAF_TEXT.replace("6,d,2,3,3", "6,d,2,3,8")
        with pytest.raises(HierarchyParseError, match="no contiguo"):
            atlas_service.parse_hierarchy(text)

    def test_duplicate_name(self):
        """Prueba nombres duplicados."""
        text = FOUR_LEAF_TEXT.replace("6,d,2,3,3", "6,c,2,3,3")
        with pytest.raises(HierarchyParseError, match="nombre duplicado"):
            atlas_service.parse_hierarchy(text)

    def test_load_missing_file(self, tmp_path):
        """Prueba que un archivo inexistente produce un error de validación."""
        with pytest.raises(ValidationError):
            atlas_service.load_hierarchy(tmp_path / "missing.csv")


@pytest.mark.unit
class TestLowestCommonAncestor:
    """Pruebas del ancestro común más profundo."""

    def test_siblings_share_parent(self, four_leaf_hierarchy):
        """Prueba que hermanas tienen como LCA al padre."""
        assert atlas_service.lowest_common_ancestor(four_leaf_hierarchy, 0, 1) == 1
        assert atlas_service.lowest_common_ancestor(four_leaf_hierarchy, 2, 3) == 2

    def test_cross_branch_is_root(self, four_leaf_hierarchy):
        """Prueba que hojas de ramas distintas tienen LCA raíz."""
        assert atlas_service.lowest_common_ancestor(four_leaf_hierarchy, 0, 3) == 0

    def test_same_leaf(self, four_leaf_hierarchy):
        """Prueba que el LCA de una hoja consigo misma es la hoja."""
        assert atlas_service.lowest_common_ancestor(four_leaf_hierarchy, 2, 2) == 5

    def test_symmetric_and_ancestor(self, rng):
        """Prueba simetría y que el LCA contiene ambas hojas en hojas aleatorias."""
        for _ in range(5):
            h = atlas_service.parse_hierarchy(random_hierarchy_text(rng))
            table = atlas_service.pair_lca_table(h)
            assert np.array_equal(table, table.T)
            for a in range(h.p):
                for b in range(h.p):
                    lca = int(table[a, b])
                    assert a in h.leaf_rois(lca) and b in h.leaf_rois(lca)

    def test_leaf_out_of_range(self, four_leaf_hierarchy):
        """Prueba un roi_index inexistente."""
        with pytest.raises(AtlasServiceError):
            atlas_service.lowest_common_ancestor(four_leaf_hierarchy, 0, 9)


@pytest.mark.unit
class TestNodeOrder:
    """Pruebas del orden determinista de nodos."""

    def test_internal_nodes_by_level_then_file(self, four_leaf_hierarchy):
        """Prueba el orden (nivel, posición en el archivo)."""
        assert atlas_service.internal_nodes(four_leaf_hierarchy) == [0, 1, 2]

    def test_leaf_nodes_by_roi(self, four_leaf_hierarchy):
        """Prueba que las hojas se ordenan por roi_index."""
        assert atlas_service.leaf_nodes(four_leaf_hierarchy) == [3, 4, 5, 6]

    def test_dk_internal_levels(self, dk_hierarchy):
        """Prueba que los nodos internos DK están ordenados por nivel."""
        levels = [dk_hierarchy.node(n).level for n in atlas_service.internal_nodes(dk_hierarchy)]
        assert levels == sorted(levels)
        assert levels[0] == 1

"""
Oráculo exacto de homología para el peso de cada nodo del árbol.

Cada región se modela como un punto (0-celda) con un lazo (1-celda) por fibra
interna. Para un nodo interno se construyen dos complejos de cadenas:

- hijos: unión disjunta de los hijos, con sus fibras internas como lazos
- padre: un único punto con todas las fibras bajo el nodo como lazos

La inclusión induce un morfismo de cadenas F; el corango de F_* en H_1 cuenta
las fibras que conectan hijos distintos, es decir, el peso del nodo en el árbol.
Todos los rangos se calculan sobre ℚ con aritmética exacta (sympy DomainMatrix).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sympy import QQ
from sympy.polys.matrices import DomainMatrix

from src.config import settings
from src.dependencies import parallel_map
from src.services.atlas_service import AtlasHierarchy, atlas_service
from src.services.connectome_service import AdjacencyMatrix
from src.services.tree_service import tree_service
from src.utils.error_handler import ComputationError, ValidationError

logger = logging.getLogger(__name__)

Chain = Dict[int, object]


class HomologyServiceError(ValidationError):
    """Exceção personalizada para entradas inválidas do oráculo."""
    pass


class OracleBudgetError(ComputationError):
    """El complejo supera el presupuesto de celdas del oráculo."""
    pass


class ChainMapError(ComputationError):
    """El morfismo construido no conmuta con los bordes."""
    pass


@dataclass(frozen=True)
class OneCell:
    """1-celda: un lazo si start == end, un camino si no."""
    label: str
    start: str
    end: str

    @property
    def is_loop(self) -> bool:
        return self.start == self.end


@dataclass
class ChainComplex:
    """Complejo de 0-celdas y 1-celdas (sin 2-celdas) con borde ∂ sobre ℚ."""
    zero_cells: List[str]
    one_cells: List[OneCell] = field(default_factory=list)

    def __post_init__(self):
        self._zero_index = {label: i for i, label in enumerate(self.zero_cells)}
        self._one_index = {cell.label: i for i, cell in enumerate(self.one_cells)}
        if len(self._zero_index) != len(self.zero_cells):
            raise HomologyServiceError("etiquetas de 0-celda duplicadas")
        if len(self._one_index) != len(self.one_cells):
            raise HomologyServiceError("etiquetas de 1-celda duplicadas")
        for cell in self.one_cells:
            if cell.start not in self._zero_index or cell.end not in self._zero_index:
                raise HomologyServiceError(f"1-celda {cell.label!r} con extremo inexistente")

    @property
    def cell_count(self) -> int:
        return len(self.zero_cells) + len(self.one_cells)

    def zero_index(self, label: str) -> int:
        return self._zero_index[label]

    def one_index(self, label: str) -> int:
        return self._one_index[label]

    def cell_boundary(self, cell: OneCell) -> Chain:
        """∂(s→e) = e − s como cadena dispersa de 0-celdas (vacía para lazos)."""
        if cell.is_loop:
            return {}
        return {self._zero_index[cell.end]: QQ(1), self._zero_index[cell.start]: QQ(-1)}

    @property
    def boundary(self) -> DomainMatrix:
        """Matriz de borde dispersa (0-celdas × 1-celdas) sobre ℚ."""
        return DomainMatrix(dict(_boundary_rows(self)), (len(self.zero_cells), len(self.one_cells)), QQ)


@dataclass
class ChainMap:
    """Morfismo de cadenas: asignación de 0-celdas y de 1-celdas del dominio al codominio."""
    domain: ChainComplex
    codomain: ChainComplex
    map_0: Dict[str, str]
    map_1: Dict[str, str]

    def image_of_chain(self, chain: Chain) -> Chain:
        """F aplicado a una 1-cadena del dominio (índices del codominio)."""
        image: Chain = {}
        for j, value in chain.items():
            target = self.codomain.one_index(self.map_1[self.domain.one_cells[j].label])
            total = image.get(target, QQ(0)) + value
            if total:
                image[target] = total
            else:
                image.pop(target, None)
        return image

    def commutes(self) -> bool:
        """Verifica ∂∘F = F∘∂ celda a celda."""
        for cell in self.domain.one_cells:
            image_cell = self.codomain.one_cells[self.codomain.one_index(self.map_1[cell.label])]
            left = self.codomain.cell_boundary(image_cell)
            right: Chain = {}
            for i, value in self.domain.cell_boundary(cell).items():
                target = self.codomain.zero_index(self.map_0[self.domain.zero_cells[i]])
                total = right.get(target, QQ(0)) + value
                if total:
                    right[target] = total
                else:
                    right.pop(target, None)
            if left != right:
                logger.error("Conmutación fallida", extra={"cell": cell.label})
                return False
        return True

    def image_rank(self, basis: Sequence[Chain]) -> int:
        """Rango de la imagen de una base (lista de 1-cadenas del dominio)."""
        rows = {i: self.image_of_chain(vector) for i, vector in enumerate(basis)}
        rows = {i: row for i, row in rows.items() if row}
        return _rank(rows, (len(basis), len(self.codomain.one_cells)))


@dataclass
class CorankResult:
    """Contabilidad de rangos de un nodo interno."""
    node_id: int
    parent_h1: int
    children_h1: int
    image_rank: int

    @property
    def corank(self) -> int:
        return self.parent_h1 - self.image_rank


@dataclass
class VerificationRow:
    """Fila del informe de verificación por nodo."""
    node_name: str
    weight: int
    corank: int

    @property
    def match(self) -> bool:
        return self.weight == self.corank


def _rank(rows: Dict[int, Dict[int, object]], shape: Tuple[int, int]) -> int:
    if not rows or 0 in shape:
        return 0
    return DomainMatrix(rows, shape, QQ).rank()


def _rref(rows: Dict[int, Dict[int, object]], shape: Tuple[int, int]):
    """rref exacta; devuelve (filas dispersas, pivotes)."""
    if not rows or 0 in shape:
        return {}, ()
    reduced, pivots = DomainMatrix(rows, shape, QQ).rref()
    return dict(reduced.to_sparse().rep), tuple(pivots)


def _fiber_label(a: int, b: int, k: int) -> str:
    return f"fiber:{a}-{b}#{k}"


class HomologyService:
    """Serviço do oráculo de homologia exata."""

    def __init__(self, cell_budget: Optional[int] = None):
        self.cell_budget = cell_budget

    @property
    def budget(self) -> int:
        return self.cell_budget if self.cell_budget is not None else settings.ORACLE_CELL_BUDGET

    def _check_inputs(self, h: AtlasHierarchy, A: AdjacencyMatrix, parent: int) -> None:
        if A.real_valued:
            raise HomologyServiceError("el oráculo solo admite conteos enteros")
        if A.p != h.p:
            raise HomologyServiceError(f"la matriz tiene p={A.p} y la jerarquía {h.p} hojas")
        if h.node(parent).is_leaf:
            raise HomologyServiceError(f"el nodo {h.node(parent).name!r} es una hoja")

    def _loops(self, A: AdjacencyMatrix, rois: Sequence[int], base: str) -> List[OneCell]:
        """Un lazo por fibra entre ROIs del conjunto (incluye autoconexiones)."""
        rois = np.asarray(sorted(rois), dtype=np.int64)
        block = A.counts[np.ix_(rois, rois)]
        iu, ju = np.triu_indices(len(rois))
        cells = []
        for i, j in zip(iu, ju):
            multiplicity = int(block[i, j])
            a, b = int(rois[i]), int(rois[j])
            cells.extend(OneCell(_fiber_label(a, b, k), base, base) for k in range(multiplicity))
        return cells

    def _enforce_budget(self, h: AtlasHierarchy, A: AdjacencyMatrix, parent: int) -> None:
        rois = np.asarray(h.leaf_rois(parent), dtype=np.int64)
        block = A.counts[np.ix_(rois, rois)]
        cells = int(np.triu(block).sum()) + 1
        if cells > self.budget:
            raise OracleBudgetError(
                f"el nodo {h.node(parent).name!r} requiere {cells} celdas (presupuesto {self.budget})"
            )

    def build_children_complex(self, h: AtlasHierarchy, A: AdjacencyMatrix, parent: int) -> ChainComplex:
        """
        Unión disjunta de los hijos: un punto por hijo y un lazo por fibra interna a cada hijo.

        Las fibras entre hijos distintos no forman parte de este complejo.
        """
        self._check_inputs(h, A, parent)
        self._enforce_budget(h, A, parent)
        zero_cells = []
        one_cells: List[OneCell] = []
        for child in h.children(parent):
            name = h.node(child).name
            zero_cells.append(name)
            one_cells.extend(self._loops(A, h.leaf_rois(child), name))
        return ChainComplex(zero_cells=zero_cells, one_cells=one_cells)

    def build_parent_complex(self, h: AtlasHierarchy, A: AdjacencyMatrix, parent: int) -> ChainComplex:
        """Un único punto con un lazo por fibra bajo el nodo."""
        self._check_inputs(h, A, parent)
        self._enforce_budget(h, A, parent)
        name = h.node(parent).name
        return ChainComplex(zero_cells=[name], one_cells=self._loops(A, h.leaf_rois(parent), name))

    def induced_map(self, children: ChainComplex, parent: ChainComplex) -> ChainMap:
        """
        Morfismo inducido por la inclusión: colapsa los puntos en el del padre y
        envía cada 1-celda a la 1-celda del padre con la misma etiqueta.

        Raises:
            HomologyServiceError: Etiquetados incompatibles
            ChainMapError: Si ∂∘F ≠ F∘∂
        """
        if not parent.zero_cells:
            if children.zero_cells:
                raise HomologyServiceError("el codominio no tiene 0-celdas")
            return ChainMap(children, parent, {}, {})
        point = parent.zero_cells[0]
        map_0 = {label: point for label in children.zero_cells}
        map_1 = {}
        for cell in children.one_cells:
            try:
                parent.one_index(cell.label)
            except KeyError:
                raise HomologyServiceError(f"1-celda sin imagen en el padre: {cell.label!r}") from None
            map_1[cell.label] = cell.label
        chain_map = ChainMap(domain=children, codomain=parent, map_0=map_0, map_1=map_1)
        if not chain_map.commutes():
            raise ChainMapError("el morfismo inducido no conmuta con el borde")
        return chain_map

    def homology_rank(self, C: ChainComplex, degree: int) -> int:
        """
        Rango de H_0 o H_1 (sin 2-celdas: H_1 = ker ∂).

        Args:
            C: Complejo
            degree: 0 o 1
        """
        if degree not in (0, 1):
            raise HomologyServiceError(f"grado no soportado: {degree}")
        rows = dict(_boundary_rows(C))
        rank = _rank(rows, (len(C.zero_cells), len(C.one_cells)))
        if degree == 0:
            return len(C.zero_cells) - rank
        return len(C.one_cells) - rank

    def homology_basis(self, C: ChainComplex) -> List[Chain]:
        """
        Base de H_1 = ker ∂ a partir de la forma escalonada reducida.

        Returns:
            Una 1-cadena (índice -> racional) por columna libre
        """
        shape = (len(C.zero_cells), len(C.one_cells))
        reduced, pivots = _rref(dict(_boundary_rows(C)), shape)
        pivot_set = set(pivots)
        by_column: Dict[int, Dict[int, object]] = {}
        for row, entries in reduced.items():
            for col, value in entries.items():
                by_column.setdefault(col, {})[row] = value
        basis = []
        for free in range(len(C.one_cells)):
            if free in pivot_set:
                continue
            vector: Chain = {free: QQ(1)}
            for row, value in by_column.get(free, {}).items():
                vector[pivots[row]] = -value
            basis.append(vector)
        return basis

    def corank_detail(self, h: AtlasHierarchy, A: AdjacencyMatrix, parent: int) -> CorankResult:
        """Corango con la contabilidad de rangos (H_1 del padre, de los hijos e imagen)."""
        children = self.build_children_complex(h, A, parent)
        parent_complex = self.build_parent_complex(h, A, parent)
        chain_map = self.induced_map(children, parent_complex)
        basis = self.homology_basis(children)
        return CorankResult(
            node_id=parent,
            parent_h1=self.homology_rank(parent_complex, 1),
            children_h1=len(basis),
            image_rank=chain_map.image_rank(basis),
        )

    def corank(self, h: AtlasHierarchy, A: AdjacencyMatrix, parent: int) -> int:
        """
        rank H_1(padre) − rank de la imagen de F_* sobre H_1(hijos).

        Args:
            h: Jerarquía
            A: Matriz de conteos enteros
            parent: node_id interno
        """
        return self.corank_detail(h, A, parent).corank

    def verify_theorem(
        self, h: AtlasHierarchy, A: AdjacencyMatrix, threads: Optional[int] = None
    ) -> List[VerificationRow]:
        """
        Compara el corango con el peso del árbol en todos los nodos internos.

        Los fallos se informan en las filas, no se lanzan.

        Returns:
            Filas en el orden de internal_nodes
        """
        if A.real_valued:
            raise HomologyServiceError("el oráculo solo admite conteos enteros")
        tree = tree_service.build_tree(h, A)
        nodes = atlas_service.internal_nodes(h)
        coranks = parallel_map(lambda node_id: self.corank(h, A, node_id), nodes, threads)
        rows = [
            VerificationRow(node_name=h.node(node_id).name, weight=int(tree.weights[node_id]), corank=corank)
            for node_id, corank in zip(nodes, coranks)
        ]
        failures = [row.node_name for row in rows if not row.match]
        if failures:
            logger.warning("Verificación con discrepancias", extra={"subject_id": A.subject_id, "failures": failures})
        else:
            logger.info("Verificación completa", extra={"subject_id": A.subject_id, "nodes": len(rows)})
        return rows


def _boundary_rows(C: ChainComplex):
    """Filas dispersas de ∂ (solo las no nulas)."""
    rows: Dict[int, Dict[int, object]] = {}
    for j, cell in enumerate(C.one_cells):
        for i, value in C.cell_boundary(cell).items():
            rows.setdefault(i, {})[j] = value
    return rows.items()


# Instancia global del servicio
homology_service = HomologyService()

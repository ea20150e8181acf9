"""
Servicio de representación en árbol de conectomas.

Cada nodo interno acumula las fibras que conectan dos hijos distintos suyos
(pares de ROIs cuyo ancestro común más profundo es ese nodo); cada hoja guarda
la autoconexión de su ROI (diagonal).
"""
import io
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.dependencies import parallel_map
from src.integrations.file_store import file_store
from src.services.atlas_service import AtlasHierarchy, atlas_service
from src.services.connectome_service import AdjacencyMatrix, FeatureMatrix
from src.utils.error_handler import ValidationError

logger = logging.getLogger(__name__)

TREE_COLUMNS = ["subject_id", "node_name", "level", "weight"]


class TreeServiceError(ValidationError):
    """Exceção personalizada para erros do serviço de árvores."""
    pass


@dataclass(frozen=True)
class ConnectomeTree:
    """
    Árbol con la topología de la jerarquía y un peso por nodo.

    Attributes:
        hierarchy: Jerarquía de referencia
        weights: node_id -> peso (entero en modo de conteos, real en modo ponderado o en medias)
        subject_id: Identificador del sujeto (o del grupo)
    """
    hierarchy: AtlasHierarchy
    weights: Dict[int, float]
    subject_id: str = ""

    def weight(self, node_id: int):
        return self.weights[node_id]

    def weight_by_name(self, name: str):
        return self.weights[self.hierarchy.node_by_name(name).node_id]


@dataclass
class ConservationReport:
    """Resultado de la verificación de conservación de fibras."""
    internal_sum: float
    upper_sum: float
    leaf_sum: float
    trace: float

    @property
    def ok(self) -> bool:
        if isinstance(self.upper_sum, int):
            return self.internal_sum == self.upper_sum and self.leaf_sum == self.trace
        # Modo ponderado: el orden de suma difiere
        return bool(np.isclose(self.internal_sum, self.upper_sum) and np.isclose(self.leaf_sum, self.trace))


class TreeService:
    """Serviço de construção e vetorização de árvores de conectoma."""

    def __init__(self):
        self._lca_cache: Dict[AtlasHierarchy, np.ndarray] = {}
        self._lca_lock = threading.Lock()

    def _lca_positions(self, h: AtlasHierarchy) -> np.ndarray:
        """Tabla p×p de ancestros comunes, cacheada por jerarquía."""
        with self._lca_lock:
            table = self._lca_cache.get(h)
            if table is None:
                table = atlas_service.pair_lca_table(h)
                self._lca_cache[h] = table
        return table

    def build_tree(self, h: AtlasHierarchy, A: AdjacencyMatrix) -> ConnectomeTree:
        """
        Construye el árbol sumando cada par de ROIs (a<b) en su ancestro común.

        Args:
            h: Jerarquía
            A: Matriz de adyacencia con A.p == h.p

        Returns:
            ConnectomeTree con peso para todos los nodos

        Raises:
            TreeServiceError: Si las dimensiones no coinciden
        """
        if A.p != h.p:
            raise TreeServiceError(f"la matriz tiene p={A.p} y la jerarquía {h.p} hojas")

        lca = self._lca_positions(h)
        iu, ju = np.triu_indices(h.p, k=1)
        index = {node.node_id: i for i, node in enumerate(h.nodes)}
        slots = np.array([index[node_id] for node_id in lca[iu, ju]], dtype=np.int64)

        dtype = np.float64 if A.real_valued else np.int64
        totals = np.zeros(len(h.nodes), dtype=dtype)
        np.add.at(totals, slots, A.counts[iu, ju].astype(dtype))
        for roi in range(h.p):
            totals[index[h.leaf_for_roi(roi)]] += A.counts[roi, roi]

        cast = float if A.real_valued else int
        weights = {node.node_id: cast(totals[i]) for i, node in enumerate(h.nodes)}
        return ConnectomeTree(hierarchy=h, weights=weights, subject_id=A.subject_id)

    def build_cohort_trees(
        self, h: AtlasHierarchy, cohort: Sequence[AdjacencyMatrix], threads: Optional[int] = None
    ) -> List[ConnectomeTree]:
        """Construye los árboles de una cohorte en paralelo (orden preservado)."""
        self._lca_positions(h)
        trees = parallel_map(lambda A: self.build_tree(h, A), cohort, threads)
        logger.info("Árboles construidos", extra={"subjects": len(trees), "nodes": len(h.nodes)})
        return trees

    def feature_order(self, h: AtlasHierarchy, include_leaves: bool = False) -> List[int]:
        """Orden de nodos de la vectorización: internos y, opcionalmente, hojas por roi_index."""
        order = atlas_service.internal_nodes(h)
        if include_leaves:
            order += atlas_service.leaf_nodes(h)
        return order

    def vectorize_tree(self, t: ConnectomeTree, include_leaves: bool = False) -> tuple:
        """
        Vectoriza un árbol en el orden de internal_nodes.

        Args:
            t: Árbol
            include_leaves: Añade las hojas al final (orden por roi_index)

        Returns:
            (valores, etiquetas) con etiquetas = nombres de nodo
        """
        order = self.feature_order(t.hierarchy, include_leaves)
        values = np.array([t.weights[node_id] for node_id in order])
        labels = [t.hierarchy.node(node_id).name for node_id in order]
        return values, labels

    def trees_to_features(self, trees: Sequence[ConnectomeTree], include_leaves: bool = False) -> FeatureMatrix:
        """Apila los árboles vectorizados en una FeatureMatrix."""
        if not trees:
            raise TreeServiceError("no hay árboles")
        rows = []
        labels: List[str] = []
        for tree in trees:
            if tree.hierarchy is not trees[0].hierarchy and tree.hierarchy != trees[0].hierarchy:
                raise TreeServiceError("los árboles no comparten jerarquía")
            values, labels = self.vectorize_tree(tree, include_leaves)
            rows.append(values.astype(float))
        return FeatureMatrix(values=np.vstack(rows), column_labels=labels, row_labels=[t.subject_id for t in trees])

    def conservation_check(self, h: AtlasHierarchy, A: AdjacencyMatrix, t: ConnectomeTree) -> ConservationReport:
        """
        Verifica que la suma de nodos internos iguale el triángulo superior y la de hojas la traza.

        Returns:
            ConservationReport con ambas sumas
        """
        internal = set(atlas_service.internal_nodes(h))
        internal_sum = sum(w for node_id, w in t.weights.items() if node_id in internal)
        leaf_sum = sum(w for node_id, w in t.weights.items() if node_id not in internal)
        iu, ju = np.triu_indices(h.p, k=1)
        cast = float if A.real_valued else int
        report = ConservationReport(
            internal_sum=internal_sum,
            upper_sum=cast(A.counts[iu, ju].sum()),
            leaf_sum=leaf_sum,
            trace=cast(np.trace(A.counts)),
        )
        if not report.ok:
            logger.warning("Conservación violada", extra={"subject_id": t.subject_id, **report.__dict__})
        return report

    def mean_tree(self, trees: Sequence[ConnectomeTree], subject_id: str = "mean") -> ConnectomeTree:
        """Árbol medio (pesos reales) de un grupo de árboles con la misma jerarquía."""
        if not trees:
            raise TreeServiceError("no hay árboles para promediar")
        h = trees[0].hierarchy
        weights = {
            node.node_id: float(np.mean([t.weights[node.node_id] for t in trees])) for node in h.nodes
        }
        return ConnectomeTree(hierarchy=h, weights=weights, subject_id=subject_id)

    def contrast_groups(
        self, trees: Sequence[ConnectomeTree], trait: np.ndarray, fraction: float = 0.10
    ) -> tuple:
        """
        Árboles medios de los sujetos en la fracción superior e inferior de un rasgo.

        Los faltantes (NaN) se excluyen; los empates se resuelven por orden de sujeto.

        Args:
            trees: Árboles de la cohorte
            trait: Valores del rasgo alineados con trees
            fraction: Fracción de cada extremo (por defecto 10 %)

        Returns:
            (árbol medio superior, árbol medio inferior)
        """
        trait = np.asarray(trait, dtype=float)
        if len(trait) != len(trees):
            raise TreeServiceError("el rasgo no está alineado con los árboles")
        if not 0 < fraction <= 0.5:
            raise TreeServiceError(f"la fracción debe estar en (0, 0.5]: {fraction}")
        observed = np.flatnonzero(~np.isnan(trait))
        size = max(1, int(np.floor(fraction * observed.size)))
        if observed.size < 2 * size:
            raise TreeServiceError("no hay suficientes sujetos con el rasgo observado")
        order = observed[np.argsort(trait[observed], kind="stable")]
        bottom = [trees[i] for i in order[:size]]
        top = [trees[i] for i in order[-size:]]
        return self.mean_tree(top, "top"), self.mean_tree(bottom, "bottom")

    def trees_to_frame(self, trees: Sequence[ConnectomeTree]) -> pd.DataFrame:
        records = []
        for tree in trees:
            for node in tree.hierarchy.nodes:
                records.append((tree.subject_id, node.name, node.level, tree.weights[node.node_id]))
        return pd.DataFrame.from_records(records, columns=TREE_COLUMNS)

    def write_trees(self, path: Path | str, trees: Sequence[ConnectomeTree]) -> Path:
        """Escribe `subject_id,node_name,level,weight` en orden de sujeto y de archivo."""
        return file_store.write_csv(path, self.trees_to_frame(trees))

    def read_trees(self, text: str, h: AtlasHierarchy) -> List[ConnectomeTree]:
        """
        Lee un CSV de árboles contra una jerarquía.

        Raises:
            TreeServiceError: Nodos desconocidos, niveles incoherentes o árboles incompletos
        """
        frame = pd.read_csv(io.StringIO(text), dtype={"subject_id": str, "node_name": str})
        if list(frame.columns) != TREE_COLUMNS:
            raise TreeServiceError(f"cabecera esperada {','.join(TREE_COLUMNS)}")
        trees = []
        for subject_id, group in frame.groupby("subject_id", sort=False):
            weights = {}
            for name, level, weight in zip(group["node_name"], group["level"], group["weight"]):
                try:
                    node = h.node_by_name(name)
                except ValidationError:
                    raise TreeServiceError(f"nodo desconocido en el árbol {subject_id}: {name!r}") from None
                if node.level != int(level):
                    raise TreeServiceError(f"nivel incoherente para {name!r}: {level}")
                weights[node.node_id] = int(weight) if float(weight).is_integer() else float(weight)
            if len(weights) != len(h.nodes):
                raise TreeServiceError(f"el árbol {subject_id} no tiene peso para todos los nodos")
            trees.append(ConnectomeTree(hierarchy=h, weights=weights, subject_id=str(subject_id)))
        return trees


# Instancia global del servicio
tree_service = TreeService()

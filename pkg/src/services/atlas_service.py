"""
Servicio de jerarquías de regiones cerebrales (atlas).

Este módulo fornece:
- Parseo y validación del archivo CSV de jerarquía (con número de línea en cada error)
- Consultas sobre la topología: hijos, hojas, ancestro común más profundo
- El orden determinista de nodos internos que usan todas las vectorizaciones

El archivo, y no el código, es la fuente de verdad de la jerarquía; el atlas
Desikan-Killiany empaquetado es solo el valor por defecto.
"""
import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config import settings
from src.integrations.file_store import file_store
from src.utils.error_handler import ValidationError

logger = logging.getLogger(__name__)

HIERARCHY_HEADER = ["node_id", "name", "parent_id", "level", "roi_index"]


class AtlasServiceError(ValidationError):
    """Exceção personalizada para erros do serviço de atlas."""
    pass


class HierarchyParseError(AtlasServiceError):
    """Error de parseo con el número de línea del archivo de origen."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        prefix = f"línea {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")


@dataclass(frozen=True)
class HierarchyNode:
    """
    Nodo de la jerarquía de regiones.

    Attributes:
        node_id: Identificador entero >= 0
        name: Nombre único dentro de la jerarquía
        parent_id: Identificador del padre (None para la raíz)
        level: Nivel (raíz = 1)
        roi_index: Índice de ROI en [0, p) si es hoja, None si es interno
    """
    node_id: int
    name: str
    parent_id: Optional[int]
    level: int
    roi_index: Optional[int] = None

    @property
    def is_leaf(self) -> bool:
        return self.roi_index is not None


@dataclass(frozen=True)
class AtlasHierarchy:
    """Árbol enraizado de regiones; inmutable tras el parseo."""
    nodes: Tuple[HierarchyNode, ...]
    _by_id: Dict[int, HierarchyNode] = field(init=False, repr=False, compare=False)
    _position: Dict[int, int] = field(init=False, repr=False, compare=False)
    _children: Dict[int, Tuple[int, ...]] = field(init=False, repr=False, compare=False)
    _leaf_by_roi: Dict[int, int] = field(init=False, repr=False, compare=False)
    _leaf_rois: Dict[int, Tuple[int, ...]] = field(init=False, repr=False, compare=False)
    _paths: Dict[int, Tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id = {node.node_id: node for node in self.nodes}
        position = {node.node_id: i for i, node in enumerate(self.nodes)}
        children: Dict[int, List[int]] = {node.node_id: [] for node in self.nodes}
        for node in self.nodes:
            if node.parent_id is not None:
                children[node.parent_id].append(node.node_id)
        leaf_by_roi = {node.roi_index: node.node_id for node in self.nodes if node.is_leaf}

        # Caminos raíz -> nodo (los padres aparecen antes por nivel)
        paths: Dict[int, Tuple[int, ...]] = {}
        for node in sorted(self.nodes, key=lambda n: n.level):
            if node.parent_id is None:
                paths[node.node_id] = (node.node_id,)
            else:
                paths[node.node_id] = paths[node.parent_id] + (node.node_id,)

        leaf_rois: Dict[int, List[int]] = {node.node_id: [] for node in self.nodes}
        for roi, leaf_id in leaf_by_roi.items():
            for ancestor in paths[leaf_id]:
                leaf_rois[ancestor].append(roi)

        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_position", position)
        object.__setattr__(self, "_children", {k: tuple(v) for k, v in children.items()})
        object.__setattr__(self, "_leaf_by_roi", leaf_by_roi)
        object.__setattr__(self, "_leaf_rois", {k: tuple(sorted(v)) for k, v in leaf_rois.items()})
        object.__setattr__(self, "_paths", paths)

    @property
    def p(self) -> int:
        """Número de hojas (ROIs)."""
        return len(self._leaf_by_roi)

    @property
    def L(self) -> int:
        """Nivel máximo."""
        return max(node.level for node in self.nodes)

    @property
    def level_counts(self) -> Dict[int, int]:
        """N_l: número de nodos por nivel."""
        counts: Dict[int, int] = {}
        for node in self.nodes:
            counts[node.level] = counts.get(node.level, 0) + 1
        return dict(sorted(counts.items()))

    @property
    def root(self) -> HierarchyNode:
        return next(node for node in self.nodes if node.parent_id is None)

    def node(self, node_id: int) -> HierarchyNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise AtlasServiceError(f"nodo inexistente: {node_id}") from None

    def node_by_name(self, name: str) -> HierarchyNode:
        for node in self.nodes:
            if node.name == name:
                return node
        raise AtlasServiceError(f"nodo inexistente: {name!r}")

    def position(self, node_id: int) -> int:
        """Posición del nodo en el orden del archivo."""
        return self._position[node_id]

    def children(self, node_id: int) -> Tuple[int, ...]:
        """Hijos en orden del archivo."""
        return self._children[node_id]

    def leaf_for_roi(self, roi_index: int) -> int:
        if roi_index not in self._leaf_by_roi:
            raise AtlasServiceError(f"roi_index fuera de rango: {roi_index} (p={self.p})")
        return self._leaf_by_roi[roi_index]

    def leaf_rois(self, node_id: int) -> Tuple[int, ...]:
        """ROIs de las hojas descendientes (ordenados)."""
        return self._leaf_rois[node_id]

    def path_to(self, node_id: int) -> Tuple[int, ...]:
        """Camino raíz -> nodo."""
        return self._paths[node_id]

    def leaves_in_file_order(self) -> List[HierarchyNode]:
        return [node for node in self.nodes if node.is_leaf]


class AtlasService:
    """Serviço para parseo y consulta de jerarquías de regiones."""

    def parse_hierarchy(self, text: str) -> AtlasHierarchy:
        """
        Parsea y valida el contenido de un archivo de jerarquía.

        Args:
            text: Contenido CSV (`node_id,name,parent_id,level,roi_index`, comentarios con #)

        Returns:
            Jerarquía validada

        Raises:
            HierarchyParseError: Con el número de línea del problema
        """
        rows = self._read_rows(text)

        nodes: List[HierarchyNode] = []
        line_of: Dict[int, int] = {}
        names: Dict[str, int] = {}
        for line_number, record in rows:
            node = self._parse_record(record, line_number)
            if node.node_id in line_of:
                raise HierarchyParseError(f"node_id duplicado: {node.node_id}", line_number)
            if node.name in names:
                raise HierarchyParseError(
                    f"nombre duplicado: {node.name!r} (ya definido en línea {names[node.name]})", line_number
                )
            line_of[node.node_id] = line_number
            names[node.name] = line_number
            nodes.append(node)

        if not nodes:
            raise HierarchyParseError("la jerarquía no tiene nodos")

        self._validate_structure(nodes, line_of)
        hierarchy = AtlasHierarchy(tuple(nodes))
        logger.debug(
            "Jerarquía parseada",
            extra={"nodes": len(nodes), "leaves": hierarchy.p, "levels": hierarchy.L},
        )
        return hierarchy

    def _read_rows(self, text: str) -> List[Tuple[int, List[str]]]:
        """Devuelve (número de línea, campos) omitiendo comentarios y líneas vacías."""
        rows: List[Tuple[int, List[str]]] = []
        header_seen = False
        for line_number, line in enumerate(io.StringIO(text), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            record = next(csv.reader([stripped]))
            record = [field.strip() for field in record]
            if not header_seen:
                if record != HIERARCHY_HEADER:
                    raise HierarchyParseError(
                        f"cabecera inválida: se esperaba {','.join(HIERARCHY_HEADER)}", line_number
                    )
                header_seen = True
                continue
            rows.append((line_number, record))
        if not header_seen:
            raise HierarchyParseError("archivo vacío: falta la cabecera")
        return rows

    def _parse_record(self, record: List[str], line_number: int) -> HierarchyNode:
        if len(record) != len(HIERARCHY_HEADER):
            raise HierarchyParseError(
                f"se esperaban {len(HIERARCHY_HEADER)} campos, hay {len(record)}", line_number
            )
        raw_id, name, raw_parent, raw_level, raw_roi = record
        try:
            node_id = int(raw_id)
            parent_id = int(raw_parent) if raw_parent else None
            level = int(raw_level)
            roi_index = int(raw_roi) if raw_roi else None
        except ValueError as e:
            raise HierarchyParseError(f"valor no entero: {e}", line_number) from None
        if node_id < 0:
            raise HierarchyParseError(f"node_id negativo: {node_id}", line_number)
        if not name:
            raise HierarchyParseError("nombre vacío", line_number)
        if level < 1:
            raise HierarchyParseError(f"nivel inválido: {level}", line_number)
        return HierarchyNode(node_id=node_id, name=name, parent_id=parent_id, level=level, roi_index=roi_index)

    def _validate_structure(self, nodes: List[HierarchyNode], line_of: Dict[int, int]) -> None:
        by_id = {node.node_id: node for node in nodes}

        roots = [node for node in nodes if node.parent_id is None]
        if len(roots) != 1:
            line = line_of[roots[1].node_id] if len(roots) > 1 else None
            raise HierarchyParseError(f"debe haber exactamente una raíz, hay {len(roots)}", line)
        if roots[0].level != 1:
            raise HierarchyParseError("la raíz debe tener nivel 1", line_of[roots[0].node_id])

        for node in nodes:
            if node.parent_id is not None and node.parent_id not in by_id:
                raise HierarchyParseError(
                    f"parent_id huérfano: {node.parent_id} no existe", line_of[node.node_id]
                )

        # Ciclos: todo camino hacia arriba debe llegar a la raíz
        for node in nodes:
            seen = set()
            current = node
            while current.parent_id is not None:
                if current.node_id in seen:
                    raise HierarchyParseError(
                        f"ciclo detectado en el nodo {node.node_id}", line_of[node.node_id]
                    )
                seen.add(current.node_id)
                current = by_id[current.parent_id]

        has_children = {node.parent_id for node in nodes if node.parent_id is not None}
        for node in nodes:
            line = line_of[node.node_id]
            if node.parent_id is not None and node.level != by_id[node.parent_id].level + 1:
                raise HierarchyParseError(
                    f"nivel {node.level} incoherente con el padre (nivel {by_id[node.parent_id].level})", line
                )
            if node.node_id in has_children and node.roi_index is not None:
                raise HierarchyParseError(f"roi_index en nodo interno {node.name!r}", line)
            if node.node_id not in has_children and node.roi_index is None:
                raise HierarchyParseError(f"la hoja {node.name!r} no tiene roi_index", line)

        leaves = [node for node in nodes if node.roi_index is not None]
        seen_roi: Dict[int, int] = {}
        for leaf in leaves:
            if leaf.roi_index in seen_roi:
                raise HierarchyParseError(f"roi_index duplicado: {leaf.roi_index}", line_of[leaf.node_id])
            seen_roi[leaf.roi_index] = leaf.node_id
        p = len(leaves)
        for leaf in leaves:
            if not 0 <= leaf.roi_index < p:
                raise HierarchyParseError(
                    f"roi_index no contiguo: {leaf.roi_index} fuera de [0, {p})", line_of[leaf.node_id]
                )

    def serialize_hierarchy(self, h: AtlasHierarchy) -> str:
        """
        Serializa la jerarquía al formato CSV de entrada (inverso de parse_hierarchy).

        Args:
            h: Jerarquía

        Returns:
            Texto CSV con cabecera
        """
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(HIERARCHY_HEADER)
        for node in h.nodes:
            writer.writerow([
                node.node_id,
                node.name,
                "" if node.parent_id is None else node.parent_id,
                node.level,
                "" if node.roi_index is None else node.roi_index,
            ])
        return buffer.getvalue()

    def load_hierarchy(self, path: Path | str) -> AtlasHierarchy:
        """Lee y parsea un archivo de jerarquía."""
        return self.parse_hierarchy(file_store.read_text(path))

    def default_hierarchy(self) -> AtlasHierarchy:
        """Jerarquía Desikan-Killiany empaquetada."""
        return self.load_hierarchy(settings.DEFAULT_HIERARCHY_PATH)

    def lowest_common_ancestor(self, h: AtlasHierarchy, leaf_a: int, leaf_b: int) -> int:
        """
        Nodo más profundo que tiene ambas hojas como descendientes.

        Args:
            h: Jerarquía
            leaf_a: roi_index de la primera hoja
            leaf_b: roi_index de la segunda hoja

        Returns:
            node_id del ancestro común (la propia hoja si leaf_a == leaf_b)
        """
        path_a = h.path_to(h.leaf_for_roi(leaf_a))
        path_b = h.path_to(h.leaf_for_roi(leaf_b))
        lca = path_a[0]
        for node_a, node_b in zip(path_a, path_b):
            if node_a != node_b:
                break
            lca = node_a
        return lca

    def internal_nodes(self, h: AtlasHierarchy) -> List[int]:
        """
        Nodos internos en orden determinista: por nivel y luego por orden de archivo.

        Args:
            h: Jerarquía

        Returns:
            Lista de node_id (sin hojas)
        """
        internal = [node for node in h.nodes if not node.is_leaf]
        internal.sort(key=lambda n: (n.level, h.position(n.node_id)))
        return [node.node_id for node in internal]

    def leaf_nodes(self, h: AtlasHierarchy) -> List[int]:
        """Hojas ordenadas por roi_index."""
        return [h.leaf_for_roi(roi) for roi in range(h.p)]

    def pair_lca_table(self, h: AtlasHierarchy) -> np.ndarray:
        """
        Tabla p×p con el node_id del ancestro común de cada par de ROIs.

        Args:
            h: Jerarquía

        Returns:
            Matriz entera simétrica; la diagonal contiene la propia hoja
        """
        table = np.empty((h.p, h.p), dtype=np.int64)
        for a in range(h.p):
            for b in range(a, h.p):
                lca = self.lowest_common_ancestor(h, a, b)
                table[a, b] = lca
                table[b, a] = lca
        return table


# Instancia global del servicio
atlas_service = AtlasService()

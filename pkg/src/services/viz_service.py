"""
Servicio de figuras SVG deterministas.

- Diagrama de cuerdas: hojas sobre un círculo, cuerdas coloreadas por el nodo
  que las agrupa y escaladas inversamente a su nivel
- Diagrama del árbol con pesos (y diferencia porcentual entre dos árboles)
- Dispersión de rasgos por correlación con la primera variable canónica

La salida es función pura de las entradas: coordenadas con decimales fijos,
sin aleatoriedad ni marcas de tiempo.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined, select_autoescape

from src.config import settings
from src.services.atlas_service import atlas_service
from src.services.tree_service import ConnectomeTree
from src.utils.error_handler import ValidationError

logger = logging.getLogger(__name__)

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
)
DESIRABILITY_COLORS = {"desirable": "#1b9e77", "undesirable": "#d95f02"}
NEUTRAL_COLOR = "#333333"


class VizServiceError(ValidationError):
    """Exceção personalizada para entradas inválidas das figuras."""
    pass


@dataclass(frozen=True)
class ChordPlotSpec:
    """Reglas del diagrama de cuerdas."""
    size: int = 800
    radius_fraction: float = 0.36
    max_width: float = 14.0
    arc_fraction: float = 0.8
    label_size: int = 8


def _fmt(value: float) -> str:
    text = f"{float(value):.3f}"
    return "0.000" if text == "-0.000" else text


def node_color(node_id: int) -> str:
    """Color fijo por node_id."""
    return PALETTE[node_id % len(PALETTE)]


class VizService:
    """Serviço de renderização SVG."""

    def __init__(self):
        self.env = Environment(
            loader=FileSystemLoader(str(settings.TEMPLATES_DIR)),
            autoescape=select_autoescape(enabled_extensions=("svg.j2",), default_for_string=True),
            undefined=StrictUndefined,
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
        )
        self.env.filters["fmt"] = _fmt

    def _render(self, template: str, **context) -> str:
        return self.env.get_template(template).render(**context)

    def render_chord(self, t: ConnectomeTree, spec: Optional[ChordPlotSpec] = None) -> str:
        """
        Diagrama de cuerdas de un árbol.

        Cada nodo interno dibuja una cuerda por par de hijos, con el peso del nodo
        repartido a partes iguales; el grosor es proporcional a la raíz cuadrada
        del peso (con tope) y se divide por el nivel del nodo.

        Args:
            t: Árbol
            spec: Reglas de dibujo

        Returns:
            Texto SVG
        """
        spec = spec or ChordPlotSpec()
        h = t.hierarchy
        center = spec.size / 2
        radius = spec.size * spec.radius_fraction
        leaves = h.leaves_in_file_order()
        step = 2 * math.pi / len(leaves)
        angle_of = {leaf.node_id: i * step - math.pi / 2 for i, leaf in enumerate(leaves)}
        file_rank = {leaf.node_id: i for i, leaf in enumerate(leaves)}

        def point(angle: float, r: float) -> tuple:
            return center + r * math.cos(angle), center + r * math.sin(angle)

        arcs = []
        half = step * spec.arc_fraction / 2
        for leaf in leaves:
            angle = angle_of[leaf.node_id]
            x1, y1 = point(angle - half, radius)
            x2, y2 = point(angle + half, radius)
            arcs.append({"path": f"M {_fmt(x1)} {_fmt(y1)} A {_fmt(radius)} {_fmt(radius)} 0 0 1 {_fmt(x2)} {_fmt(y2)}"})

        def anchor_angle(child: int) -> float:
            descendants = sorted((h.leaf_for_roi(roi) for roi in h.leaf_rois(child)), key=file_rank.get)
            return angle_of[descendants[(len(descendants) - 1) // 2]]

        pairs = []
        for node_id in atlas_service.internal_nodes(h):
            children = h.children(node_id)
            count = len(children) * (len(children) - 1) // 2
            if count == 0 or t.weights[node_id] <= 0:
                continue
            share = float(t.weights[node_id]) / count
            for i in range(len(children)):
                for j in range(i + 1, len(children)):
                    pairs.append((node_id, anchor_angle(children[i]), anchor_angle(children[j]), share))

        max_share = max((share for *_, share in pairs), default=0.0)
        groups: Dict[int, dict] = {}
        for node_id, a, b, share in pairs:
            node = h.node(node_id)
            width = spec.max_width * math.sqrt(share / max_share) / node.level
            x1, y1 = point(a, radius)
            x2, y2 = point(b, radius)
            group = groups.setdefault(node_id, {
                "name": node.name, "level": node.level, "color": node_color(node_id), "chords": [],
            })
            group["chords"].append({
                "path": f"M {_fmt(x1)} {_fmt(y1)} Q {_fmt(center)} {_fmt(center)} {_fmt(x2)} {_fmt(y2)}",
                "width": width,
            })

        labels = []
        for leaf in leaves:
            angle = angle_of[leaf.node_id]
            x, y = point(angle, radius + 10)
            degrees = math.degrees(angle)
            flipped = math.cos(angle) < -1e-9
            labels.append({
                "x": x,
                "y": y,
                "text": leaf.name,
                "anchor": "end" if flipped else "start",
                "rotation": degrees + 180 if flipped else degrees,
            })

        return self._render(
            "chord.svg.j2",
            title=f"Conectoma en árbol {t.subject_id}".strip(),
            size=spec.size,
            center=center,
            radius=radius,
            arcs=arcs,
            groups=[groups[k] for k in atlas_service.internal_nodes(h) if k in groups],
            labels=labels,
            label_size=spec.label_size,
        )

    def tree_diagram_annotations(
        self, t: ConnectomeTree, comparison: Optional[ConnectomeTree] = None
    ) -> Dict[int, str]:
        """
        Texto por nodo: el peso o, en modo comparación, 100·(w_a − w_b)/w_b.

        Returns:
            node_id -> texto ("n/a" donde w_b = 0)

        Raises:
            VizServiceError: Si los árboles no comparten jerarquía
        """
        if comparison is not None and comparison.hierarchy != t.hierarchy:
            raise VizServiceError("los árboles comparados no comparten jerarquía")
        annotations = {}
        for node in t.hierarchy.nodes:
            w_a = t.weights[node.node_id]
            if comparison is None:
                annotations[node.node_id] = str(w_a) if isinstance(w_a, int) else f"{w_a:.2f}"
                continue
            w_b = comparison.weights[node.node_id]
            if w_b == 0:
                annotations[node.node_id] = "n/a"
            else:
                annotations[node.node_id] = f"{100.0 * (w_a - w_b) / w_b:+.1f}%"
        return annotations

    def render_tree_diagram(
        self, t: ConnectomeTree, comparison: Optional[ConnectomeTree] = None, include_leaves: bool = False
    ) -> str:
        """
        Diagrama jerárquico con nombre y peso (o diferencia porcentual) por nodo.

        Sin hojas se muestran solo los nodos internos; el radio del círculo sigue
        a la raíz cuadrada del peso.
        """
        h = t.hierarchy
        annotations = self.tree_diagram_annotations(t, comparison)
        shown = set(atlas_service.internal_nodes(h))
        if include_leaves:
            shown |= {node.node_id for node in h.nodes}

        slot = 0
        x_of: Dict[int, float] = {}

        def place(node_id: int) -> None:
            nonlocal slot
            children = [c for c in h.children(node_id) if c in shown]
            for child in children:
                place(child)
            if children:
                x_of[node_id] = sum(x_of[c] for c in children) / len(children)
            else:
                x_of[node_id] = float(slot)
                slot += 1

        root = h.root.node_id
        place(root)

        spacing, margin, level_gap = 90.0, 60.0, 90.0
        width = 2 * margin + spacing * max(slot - 1, 0)
        levels = sorted({h.node(n).level for n in shown})
        height = 2 * margin + level_gap * (len(levels) - 1) + 20
        y_of_level = {level: margin + level_gap * i for i, level in enumerate(levels)}
        max_weight = max((abs(float(t.weights[n])) for n in shown), default=0.0)

        nodes, edges = [], []
        for node in h.nodes:
            if node.node_id not in shown:
                continue
            x = margin + spacing * x_of[node.node_id]
            y = y_of_level[node.level]
            weight = abs(float(t.weights[node.node_id]))
            r = 4.0 + (14.0 * math.sqrt(weight / max_weight) if max_weight > 0 else 0.0)
            nodes.append({
                "name": node.name, "x": x, "y": y, "r": r,
                "color": node_color(node.node_id), "annotation": annotations[node.node_id],
            })
            if node.parent_id is not None and node.parent_id in shown:
                parent = h.node(node.parent_id)
                edges.append({
                    "x1": margin + spacing * x_of[parent.node_id], "y1": y_of_level[parent.level],
                    "x2": x, "y2": y,
                })

        title = f"Árbol {t.subject_id}" if comparison is None else f"Diferencia {t.subject_id} vs {comparison.subject_id}"
        return self._render("tree.svg.j2", title=title, width=width, height=height, nodes=nodes, edges=edges)

    def render_cca_scatter(
        self,
        correlations: Sequence[float],
        loadings: Sequence[float],
        labels: Sequence[str],
        desirability: Optional[Dict[str, str]] = None,
    ) -> str:
        """
        Rasgos situados por su correlación (eje x) con filas deterministas sin solapamiento.

        El tamaño de letra es proporcional a |carga|; el color sigue a la
        deseabilidad cuando se proporciona.

        Raises:
            VizServiceError: Longitudes distintas
        """
        correlations = np.asarray(correlations, dtype=float)
        loadings = np.asarray(loadings, dtype=float)
        if not len(correlations) == len(loadings) == len(labels):
            raise VizServiceError("correlaciones, cargas y etiquetas de longitud distinta")
        desirability = desirability or {}

        width, margin, row_height = 900.0, 60.0, 24.0
        plot_width = width - 2 * margin
        max_loading = float(np.max(np.abs(loadings))) if len(loadings) else 0.0

        categories = sorted(set(desirability.get(label) for label in labels) - {None})
        colors = {}
        extra = iter(PALETTE)
        for category in categories:
            colors[category] = DESIRABILITY_COLORS.get(category.lower()) or next(extra)

        order = sorted(range(len(labels)), key=lambda i: (correlations[i], i))
        rows: List[List[tuple]] = []
        traits = []
        for i in order:
            font = 8.0 + (16.0 * abs(loadings[i]) / max_loading if max_loading > 0 else 0.0)
            x = margin + (float(np.clip(correlations[i], -1, 1)) + 1) / 2 * plot_width
            half = 0.3 * font * len(labels[i]) + 2
            row = 0
            while row < len(rows) and any(not (x + half < lo or x - half > hi) for lo, hi in rows[row]):
                row += 1
            if row == len(rows):
                rows.append([])
            rows[row].append((x - half, x + half))
            category = desirability.get(labels[i])
            traits.append({
                "label": labels[i], "x": x, "row": row, "font": font,
                "color": colors.get(category, NEUTRAL_COLOR),
                "corr": correlations[i], "loading": loadings[i],
            })

        top = margin
        for trait in traits:
            trait["y"] = top + row_height * trait["row"]
        axis_y = top + row_height * max(len(rows), 1) + 10
        height = axis_y + 40 + 16 * len(categories)
        ticks = [{"x": margin + (v + 1) / 2 * plot_width, "text": f"{v:g}"} for v in (-1.0, -0.5, 0.0, 0.5, 1.0)]
        legend = [
            {"x": margin, "y": axis_y + 28 + 16 * k, "color": colors[c], "text": c}
            for k, c in enumerate(categories)
        ]
        return self._render(
            "cca.svg.j2",
            title="Correlación de rasgos con la primera variable canónica",
            width=width,
            height=height,
            axis={"x1": margin, "x2": width - margin, "y": axis_y},
            ticks=ticks,
            traits=traits,
            legend=legend,
        )


# Instancia global del servicio
viz_service = VizService()

"""
Generador de cohortes sintéticas con señal jerárquica plantada.

Cada sujeto recibe una intensidad latente z_v ~ N(0, 1) por nodo interno. El
conteo de cada par de ROIs sigue una binomial negativa con media
base_rate·exp(σ·z_lca − σ²/2), de modo que el peso de cada nodo del árbol
sigue a su latente. Los rasgos son lineales en los latentes de los nodos
elegidos más ruido; la verdad plantada se emite junto a los datos.
"""
import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic import ValidationError as PydanticValidationError

from src.config import settings
from src.dependencies import parallel_map
from src.integrations.file_store import file_store
from src.services.atlas_service import AtlasHierarchy, atlas_service
from src.services.connectome_service import AdjacencyMatrix, FeatureMatrix, connectome_service
from src.utils.error_handler import ValidationError

logger = logging.getLogger(__name__)

CONFIG_HEADER = ["parameter", "trait", "node", "value"]
PAIR_STREAM = 999_983
MISSING_STREAM = 10_000


class SynthServiceError(ValidationError):
    """Exceção personalizada para configurações sintéticas inválidas."""
    pass


class SynthConfig(BaseModel):
    """Parámetros de una cohorte sintética."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    n: int = Field(default=200, ge=2)
    hierarchy: AtlasHierarchy
    n_traits: int = Field(default=5, ge=1)
    base_rate: float = Field(default=20.0, ge=0)
    latent_sd: float = Field(default=0.5, ge=0)
    dispersion: float = Field(default=5.0, gt=0)
    signal_nodes: Dict[int, Dict[str, float]] = Field(default_factory=dict)
    trait_noise_sd: float = Field(default=1.0, ge=0)
    missing_fraction: Dict[str, float] = Field(default_factory=dict)
    zero_variance_pairs: int = Field(default=0, ge=0)
    desirability: Dict[str, str] = Field(default_factory=dict)
    seed: int = settings.DEFAULT_SEED

    @field_validator("missing_fraction")
    @classmethod
    def _fractions_in_range(cls, value: Dict[str, float]) -> Dict[str, float]:
        for trait, fraction in value.items():
            if not 0 <= fraction < 1:
                raise ValueError(f"fracción de faltantes fuera de [0, 1) para {trait}: {fraction}")
        return value

    @property
    def trait_names(self) -> List[str]:
        return [f"trait_{t:02d}" for t in range(self.n_traits)]


@dataclass
class GroundTruth:
    """Verdad plantada: efectos por (rasgo, nodo), pares constantes y faltantes."""
    effects: List[Tuple[str, str, float]]
    zero_variance_pairs: List[Tuple[int, int]]
    missing_counts: Dict[str, int]
    latents: np.ndarray = field(repr=False, default=None)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.effects, columns=["trait", "node_name", "effect"])

    def planted_traits(self) -> List[str]:
        return sorted({trait for trait, _, effect in self.effects if effect != 0})


@dataclass
class SyntheticCohort:
    matrices: List[AdjacencyMatrix]
    traits: FeatureMatrix
    truth: GroundTruth
    desirability: Dict[str, str] = field(default_factory=dict)


def make_synth_config(**kwargs) -> SynthConfig:
    """Construye SynthConfig traduciendo errores de pydantic a errores de validación del toolkit."""
    try:
        return SynthConfig(**kwargs)
    except PydanticValidationError as e:
        raise SynthServiceError(f"configuración sintética inválida: {e}") from None


class SynthService:
    """Serviço de geração de coortes sintéticas."""

    def parse_synth_config(self, text: str, hierarchy: AtlasHierarchy) -> SynthConfig:
        """
        Parsea el CSV `parameter,trait,node,value`.

        Parámetros escalares: n, n_traits, base_rate, latent_sd, dispersion,
        trait_noise_sd, zero_variance_pairs, seed. Por rasgo: effect (con nodo),
        missing, desirability.

        Raises:
            SynthServiceError: Parámetros desconocidos, nodos o rasgos inexistentes
        """
        reader = csv.reader(line for line in io.StringIO(text) if line.strip() and not line.lstrip().startswith("#"))
        rows = list(reader)
        if not rows or [cell.strip() for cell in rows[0]] != CONFIG_HEADER:
            raise SynthServiceError(f"cabecera esperada {','.join(CONFIG_HEADER)}")

        scalars: Dict[str, str] = {}
        effects: List[Tuple[str, str, str]] = []
        missing: Dict[str, str] = {}
        desirability: Dict[str, str] = {}
        integer_params = {"n", "n_traits", "zero_variance_pairs", "seed"}
        float_params = {"base_rate", "latent_sd", "dispersion", "trait_noise_sd"}
        for line_number, record in enumerate(rows[1:], start=2):
            if len(record) != 4:
                raise SynthServiceError(f"fila {line_number}: se esperaban 4 campos")
            parameter, trait, node, value = (cell.strip() for cell in record)
            if parameter in integer_params | float_params:
                scalars[parameter] = value
            elif parameter == "effect":
                effects.append((trait, node, value))
            elif parameter == "missing":
                missing[trait] = value
            elif parameter == "desirability":
                desirability[trait] = value
            else:
                raise SynthServiceError(f"fila {line_number}: parámetro desconocido {parameter!r}")

        try:
            kwargs = {k: int(v) for k, v in scalars.items() if k in integer_params}
            kwargs.update({k: float(v) for k, v in scalars.items() if k in float_params})
            signal: Dict[int, Dict[str, float]] = {}
            for trait, node, value in effects:
                node_id = hierarchy.node_by_name(node).node_id
                signal.setdefault(node_id, {})[trait] = float(value)
            missing_values = {trait: float(value) for trait, value in missing.items()}
        except ValueError as e:
            raise SynthServiceError(f"valor inválido en la configuración: {e}") from None

        config = make_synth_config(
            hierarchy=hierarchy,
            signal_nodes=signal,
            missing_fraction=missing_values,
            desirability=desirability,
            **kwargs,
        )
        known = set(config.trait_names)
        referenced = {t for effects_by_trait in signal.values() for t in effects_by_trait}
        unknown = sorted((referenced | set(missing_values) | set(desirability)) - known)
        if unknown:
            raise SynthServiceError(f"rasgos inexistentes (hay {config.n_traits}): {unknown}")
        for node_id in signal:
            if hierarchy.node(node_id).is_leaf:
                raise SynthServiceError(f"el efecto debe plantarse en un nodo interno: {hierarchy.node(node_id).name!r}")
        return config

    def _constant_pairs(self, config: SynthConfig) -> List[Tuple[int, int]]:
        """Pares constantes elegidos entre pares cuyo ancestro común es la raíz."""
        if config.zero_variance_pairs == 0:
            return []
        h = config.hierarchy
        lca = atlas_service.pair_lca_table(h)
        root = h.root.node_id
        iu, ju = np.triu_indices(h.p, k=1)
        candidates = [(int(a), int(b)) for a, b in zip(iu, ju) if lca[a, b] == root]
        if config.zero_variance_pairs > len(candidates):
            raise SynthServiceError(
                f"zero_variance_pairs={config.zero_variance_pairs} supera los {len(candidates)} pares disponibles"
            )
        rng = np.random.default_rng([config.seed, PAIR_STREAM])
        chosen = rng.choice(len(candidates), size=config.zero_variance_pairs, replace=False)
        return sorted(candidates[i] for i in chosen)

    def _generate_subject(self, config: SynthConfig, index: int, context: dict) -> tuple:
        rng = np.random.default_rng([config.seed, index])
        internal = context["internal"]
        z = rng.standard_normal(len(internal))

        sigma = config.latent_sd
        intensity = config.base_rate * np.exp(sigma * z - sigma ** 2 / 2)
        mu = intensity[context["pair_slot"]]
        r = config.dispersion
        counts = rng.negative_binomial(r, r / (r + mu)) if mu.size else np.zeros(0, dtype=np.int64)
        counts = counts.astype(np.int64)
        counts[context["constant_mask"]] = 0

        p = config.hierarchy.p
        matrix = np.zeros((p, p), dtype=np.int64)
        iu, ju = context["upper"]
        matrix[iu, ju] = counts
        matrix[ju, iu] = counts

        traits = context["effects"] @ z + config.trait_noise_sd * rng.standard_normal(config.n_traits)
        subject_id = f"sub{index:04d}"
        return AdjacencyMatrix(subject_id=subject_id, counts=matrix, roi_names=context["roi_names"]), traits, z

    def generate_cohort(self, config: SynthConfig, threads: Optional[int] = None) -> SyntheticCohort:
        """
        Genera matrices, rasgos y verdad plantada de forma determinista con la semilla.

        Cada sujeto usa su propio flujo aleatorio (semilla, índice), así que el
        resultado no depende del número de hilos.

        Returns:
            SyntheticCohort
        """
        h = config.hierarchy
        internal = atlas_service.internal_nodes(h)
        slot_of = {node_id: i for i, node_id in enumerate(internal)}
        lca = atlas_service.pair_lca_table(h)
        iu, ju = np.triu_indices(h.p, k=1)
        pair_slot = np.array([slot_of[int(lca[a, b])] for a, b in zip(iu, ju)], dtype=np.int64)

        constant = self._constant_pairs(config)
        pair_index = {(int(a), int(b)): k for k, (a, b) in enumerate(zip(iu, ju))}
        constant_mask = np.zeros(len(iu), dtype=bool)
        for pair in constant:
            constant_mask[pair_index[pair]] = True

        effects = np.zeros((config.n_traits, len(internal)))
        trait_index = {name: t for t, name in enumerate(config.trait_names)}
        truth_effects = []
        for node_id, by_trait in sorted(config.signal_nodes.items(), key=lambda item: slot_of[item[0]]):
            for trait, effect in sorted(by_trait.items()):
                effects[trait_index[trait], slot_of[node_id]] = effect
                truth_effects.append((trait, h.node(node_id).name, float(effect)))

        context = {
            "internal": internal,
            "pair_slot": pair_slot,
            "constant_mask": constant_mask,
            "upper": (iu, ju),
            "effects": effects,
            "roi_names": [h.node(h.leaf_for_roi(roi)).name for roi in range(h.p)],
        }
        subjects = parallel_map(lambda i: self._generate_subject(config, i, context), range(config.n), threads)
        matrices = [subject[0] for subject in subjects]
        trait_values = np.vstack([subject[1] for subject in subjects])
        latents = np.vstack([subject[2] for subject in subjects])

        missing_counts = {}
        for t, name in enumerate(config.trait_names):
            fraction = config.missing_fraction.get(name, 0.0)
            count = int(round(fraction * config.n))
            if count:
                rng = np.random.default_rng([config.seed, MISSING_STREAM + t])
                trait_values[rng.choice(config.n, size=count, replace=False), t] = np.nan
            missing_counts[name] = count

        traits = FeatureMatrix(
            values=trait_values,
            column_labels=config.trait_names,
            row_labels=[m.subject_id for m in matrices],
        )
        truth = GroundTruth(
            effects=truth_effects, zero_variance_pairs=constant, missing_counts=missing_counts, latents=latents
        )
        logger.info(
            "Cohorte sintética generada",
            extra={"n": config.n, "p": h.p, "traits": config.n_traits, "constant_pairs": len(constant), "seed": config.seed},
        )
        return SyntheticCohort(matrices=matrices, traits=traits, truth=truth, desirability=dict(config.desirability))

    def write_cohort(self, out_dir: Path | str, cohort: SyntheticCohort) -> Dict[str, Path]:
        """
        Escribe manifiesto, matrices, rasgos, verdad plantada y deseabilidad.

        Returns:
            Nombre lógico -> ruta escrita
        """
        out_dir = Path(out_dir)
        written: Dict[str, Path] = {}
        rows = []
        for matrix in cohort.matrices:
            relative = Path("adjacency") / f"{matrix.subject_id}.csv"
            file_store.write_text(out_dir / relative, connectome_service.write_adjacency(matrix))
            rows.append((matrix.subject_id, relative.as_posix()))
        written["manifest"] = file_store.write_csv(
            out_dir / "manifest.csv", pd.DataFrame(rows, columns=["subject_id", "adjacency_path"])
        )
        written["traits"] = connectome_service.write_features(out_dir / "traits.csv", cohort.traits)
        written["ground_truth"] = file_store.write_csv(out_dir / "ground_truth.csv", cohort.truth.frame())
        written["constant_pairs"] = file_store.write_csv(
            out_dir / "constant_pairs.csv", pd.DataFrame(cohort.truth.zero_variance_pairs, columns=["roi_a", "roi_b"])
        )
        if cohort.desirability:
            written["desirability"] = file_store.write_csv(
                out_dir / "desirability.csv",
                pd.DataFrame(sorted(cohort.desirability.items()), columns=["trait", "desirability"]),
            )
        return written


# Instancia global del servicio
synth_service = SynthService()

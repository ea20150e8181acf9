"""
Módulo de servicios del toolkit.
"""
from .atlas_service import AtlasService, atlas_service
from .connectome_service import ConnectomeService, connectome_service
from .tree_service import TreeService, tree_service
from .homology_service import HomologyService, homology_service
from .stats_service import StatsService, stats_service
from .regression_service import RegressionService, regression_service
from .bma_service import BMAService, bma_service
from .synth_service import SynthService, synth_service
from .viz_service import VizService, viz_service
from .pipeline_service import PipelineService, pipeline_service

__all__ = [
    "AtlasService",
    "atlas_service",
    "ConnectomeService",
    "connectome_service",
    "TreeService",
    "tree_service",
    "HomologyService",
    "homology_service",
    "StatsService",
    "stats_service",
    "RegressionService",
    "regression_service",
    "BMAService",
    "bma_service",
    "SynthService",
    "synth_service",
    "VizService",
    "viz_service",
    "PipelineService",
    "pipeline_service",
]

"""Pipeline configuration: graph geometry per cost mode, forest
hyperparameters, temporal bounds, seeds.

Defaults reproduce the published graph-construction parameters: learned
costs run with inter-surface 6 mm / inter-object 18 mm / smoothness 0.6 mm
on 18.15 mm columns and gradient costs with 4 / 12 / 0.4 on 12.2 mm
columns; minimum separations are zero and the inter-time-point change bound
is 0.6 mm per year.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

COST_MODES = ("gradient", "rf-only", "naf+rf")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GraphParams:
    inter_surface_max_mm: float
    inter_object_max_mm: float
    smoothness_mm: float
    column_length_mm: float
    nodes_per_column: int
    node_spacing_mm: float
    inside_fraction: float = 1.0 / 3.0

    def validate(self):
        if abs(self.nodes_per_column * self.node_spacing_mm
               - self.column_length_mm) > self.node_spacing_mm + 1e-9:
            raise ConfigError(
                f"K * spacing = {self.nodes_per_column * self.node_spacing_mm:.4f}"
                f" inconsistent with column length {self.column_length_mm}")
        if min(self.inter_surface_max_mm, self.inter_object_max_mm,
               self.smoothness_mm) < 0:
            raise ConfigError("graph distances must be non-negative")


GRADIENT_GRAPH_DEFAULTS = GraphParams(
    inter_surface_max_mm=4.0, inter_object_max_mm=12.0, smoothness_mm=0.4,
    column_length_mm=12.2, nodes_per_column=61, node_spacing_mm=0.2)

LEARNED_GRAPH_DEFAULTS = GraphParams(
    inter_surface_max_mm=6.0, inter_object_max_mm=18.0, smoothness_mm=0.6,
    column_length_mm=18.15, nodes_per_column=121, node_spacing_mm=0.15)


@dataclass(frozen=True)
class ForestParams:
    naf_trees: int = 200
    naf_patches: int = 40_000
    naf_patch_side: int = 15
    naf_samples_per_patch: int = 1521
    naf_candidate_tests: int = 20
    naf_max_depth: int = 12
    naf_min_leaf: int = 8
    naf_neighbors: int = 20
    naf_stride: int | None = None      # patch tiling stride; default side // 2
    naf_smooth_mm: float = 0.5         # probability-map smoothing
    rf_trees: int = 800
    rf_max_depth: int = 24
    clusters_per_object: int = 40


@dataclass(frozen=True)
class PipelineConfig:
    cost_mode: str = "gradient"
    gradient_graph: GraphParams = GRADIENT_GRAPH_DEFAULTS
    learned_graph: GraphParams = LEARNED_GRAPH_DEFAULTS
    forests: ForestParams = ForestParams()
    delta_tmax_mm: float | None = 0.6
    delta_tmin_mm: float = 0.0
    temporal_mode: str = "symmetric"
    gradient_w1: float = 0.7
    gradient_w2: float = 0.3
    mean_mesh_subdivisions: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.cost_mode not in COST_MODES:
            raise ConfigError(f"cost mode must be one of {COST_MODES}")
        self.gradient_graph.validate()
        self.learned_graph.validate()
        if self.delta_tmax_mm is not None and not (
                self.delta_tmax_mm >= self.delta_tmin_mm >= 0):
            raise ConfigError("temporal bounds need max >= min >= 0")

    @property
    def graph(self) -> GraphParams:
        """Graph geometry for the main solve under the active cost mode."""
        return self.gradient_graph if self.cost_mode == "gradient" \
            else self.learned_graph

    def seed_for(self, *names) -> np.random.SeedSequence:
        key = tuple(zlib.crc32(str(n).encode()) for n in names)
        return np.random.SeedSequence(entropy=int(self.seed), spawn_key=key)

    def rng_for(self, *names) -> np.random.Generator:
        return np.random.default_rng(self.seed_for(*names))

    def to_json(self) -> str:
        doc = asdict(self)
        return json.dumps(doc, sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "PipelineConfig":
        doc = json.loads(text)
        return PipelineConfig.from_dict(doc)

    @staticmethod
    def from_dict(doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        for key, cls in (("gradient_graph", GraphParams),
                         ("learned_graph", GraphParams),
                         ("forests", ForestParams)):
            if key in doc and isinstance(doc[key], dict):
                doc[key] = cls(**doc[key])
        return PipelineConfig(**doc)

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **kwargs)

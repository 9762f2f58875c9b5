"""
experiment_config.py

Schema-versioned JSON experiment files, validated with pydantic.

Every random draw is pinned down by the file: each sub-spec (model synthesis,
operator, noise, plant, solver) takes an explicit `seed` or derives one from
the top-level `seed` keyed by the sub-spec name. Unknown keys are rejected.
"""

import json
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Type, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from numerics import derive_seed

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------- SUB-SPECS ----------

Activation = Literal["identity", "relu", "leaky_relu", "tanh"]


class SynthSpec(StrictModel):
    dims: List[Annotated[int, Field(ge=1)]] = Field(min_length=2)
    activations: Union[Activation, List[Activation]] = "leaky_relu"
    lipschitz_targets: Union[float, List[float]] = 1.0
    slope: float = 0.2
    seed: Optional[int] = None


class ModelSpec(StrictModel):
    path: Optional[str] = None
    synth: Optional[SynthSpec] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.synth is None):
            raise ValueError("model needs exactly one of 'path' or 'synth'")
        return self


class OperatorSpec(StrictModel):
    kind: Literal["identity", "mask", "gaussian", "circulant_signed", "downsample"]
    m: Optional[int] = Field(default=None, ge=1)
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None


class NoiseConfig(StrictModel):
    sigma: float = Field(default=0.0, ge=0.0)
    clip: Optional[Tuple[float, float]] = None
    seed: Optional[int] = None


class PlantSpec(StrictModel):
    kind: Literal["in_range", "extended_range"] = "in_range"
    split_index: Optional[int] = None   # default: first solver split, else len(g) // 2
    r2: Optional[float] = Field(default=None, ge=0.0)   # default: solver radius at that split
    sparsity: int = Field(default=3, ge=0)
    l1_fraction: float = Field(default=0.8, ge=0.0, le=1.0)
    seed: Optional[int] = None


class LayerSpec(StrictModel):
    steps: int = Field(default=200, ge=0)
    lr_max: float = Field(default=0.1, ge=0.0)
    radius: float = Field(default=0.0, ge=0.0)
    ball_norm: Literal["l1", "l2"] = "l1"


class SolverSpec(StrictModel):
    split_indices: List[Annotated[int, Field(ge=1)]] = Field(default_factory=list)
    per_layer: Optional[List[LayerSpec]] = None   # default: r2 = 0.1 sqrt(p) per split
    steps: int = Field(default=200, ge=0)          # used only when per_layer is absent
    lr_max: float = Field(default=0.1, ge=0.0)
    input_radius: float = Field(default=1.0, gt=0.0)
    rounds: int = Field(default=1, ge=0)
    range_projection_steps: int = Field(default=200, ge=0)
    range_lr: float = Field(default=0.05, ge=0.0)
    restarts: int = Field(default=1, ge=1)
    sna_sigma: float = Field(default=0.0, ge=0.0)    # set to the measurement noise sigma
    optimizer: Literal["adam", "gd"] = "adam"
    input_constraint: Literal["ball", "sphere"] = "ball"
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _layers_match_splits(self):
        if any(b <= a for a, b in zip(self.split_indices, self.split_indices[1:])):
            raise ValueError(f"split_indices must be strictly increasing, got {self.split_indices}")
        if self.per_layer is not None and len(self.per_layer) != len(self.split_indices) + 1:
            raise ValueError(
                f"per_layer needs {len(self.split_indices) + 1} entries (CSGM + one per split), "
                f"got {len(self.per_layer)}"
            )
        return self


class SweepSpec(StrictModel):
    parameter: Literal["m", "keep_prob"] = "m"
    values: List[float] = Field(min_length=1)


# ---------- TOP-LEVEL FILES ----------

class ExperimentConfig(StrictModel):
    schema_version: Literal[1] = 1
    seed: int = 0
    model: ModelSpec
    operator: OperatorSpec
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    plant: PlantSpec = Field(default_factory=PlantSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    method: Literal["csgm", "ilo"] = "ilo"
    trials: int = Field(default=1, ge=1)
    sweep: Optional[SweepSpec] = None
    output: Optional[str] = None


class GenModelConfig(StrictModel):
    schema_version: Literal[1] = 1
    seed: int = 0
    synth: SynthSpec
    output: Optional[str] = None


class BoundGrid(StrictModel):
    d: List[int] = Field(min_length=1)
    r: List[float] = Field(default_factory=lambda: [1.0], min_length=1)
    delta: List[float] = Field(min_length=1)


class ComplexityGrid(StrictModel):
    k: int = Field(ge=1)
    p: int = Field(ge=2)
    n: Optional[int] = None
    K: List[float] = Field(min_length=1)
    gamma: List[float] = Field(default_factory=lambda: [0.8], min_length=1)
    delta: List[float] = Field(min_length=1)
    r1: float = 1.0
    L1: float = 1.0
    L2: float = 1.0
    C: float = 1.0


class TheoryGridConfig(StrictModel):
    schema_version: Literal[1] = 1
    bounds: Optional[BoundGrid] = None
    complexity: Optional[ComplexityGrid] = None
    chain: bool = False
    output: Optional[str] = None

    @model_validator(mode="after")
    def _non_empty(self):
        if self.bounds is None and self.complexity is None:
            raise ValueError("theory grid needs 'bounds' and/or 'complexity'")
        if self.chain and self.complexity is None:
            raise ValueError("'chain' needs a 'complexity' grid")
        return self


class SrecConfig(StrictModel):
    schema_version: Literal[1] = 1
    seed: int = 0
    model: ModelSpec
    split_index: int = Field(ge=1)
    operator: Literal["identity", "gaussian", "circulant_signed"] = "gaussian"
    m: Optional[int] = Field(default=None, ge=1)   # default: theory count (log^4 n inflated for circulant)
    gamma: float = Field(default=0.8, gt=0.0, lt=1.0)
    K: Optional[float] = None                       # default: suggested from k, p
    delta: Optional[float] = Field(default=None, gt=0.0)
    r1: float = Field(default=1.0, gt=0.0)
    C: float = Field(default=1.0, gt=0.0)
    sparsity: int = Field(default=3, ge=0)
    pairs: int = Field(default=200, ge=1)
    draws: int = Field(default=20, ge=1)
    output: Optional[str] = None


# ---------- LOADING ----------

Cfg = TypeVar("Cfg", bound=StrictModel)


def parse_config(data: Any, schema: Type[Cfg]) -> Cfg:
    try:
        return schema.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"{schema.__name__}: {problems}") from e


def load_config(path: Union[str, Path], schema: Type[Cfg]) -> Cfg:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from e
    return parse_config(data, schema)


def sub_seed(top_seed: int, explicit: Optional[int], name: str) -> int:
    return int(explicit) if explicit is not None else derive_seed(top_seed, name)


def config_echo(cfg: StrictModel) -> Dict[str, Any]:
    return cfg.model_dump(mode="json")

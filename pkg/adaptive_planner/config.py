"""Planner configuration, scenario and sweep documents.

Every document is a YAML file validated by a pydantic model tree. Models forbid
unknown keys, carry documented defaults, and report failures as ``ConfigError``
anchored to the line of the offending key.
"""
import copy
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type, TypeVar, Union

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    ValidationError,
    field_validator,
    model_validator,
)

from .errors import ConfigError

SCHEMA_VERSION = 1

ModelT = TypeVar("ModelT", bound=BaseModel)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EasaParams(StrictModel):
    """Risk weight parameters."""
    alpha: float = Field(3.0, gt=0, description="change-rate coefficient of the sigmoid")
    speed_epsilon: float = Field(1e-3, gt=0, description="m/s below which the alignment is neutral")
    gradient_epsilon: float = Field(1e-6, gt=0, description="ESDF slope below which the alignment is neutral")


class OptimizeOptions(StrictModel):
    """Options of the limited-memory quasi-Newton solver."""
    max_iterations: int = Field(100, ge=1)
    gradient_tolerance: float = Field(1e-5, gt=0, description="infinity-norm bound, scaled by max(1, |cost|)")
    relative_cost_tolerance: float = Field(1e-9, gt=0)
    max_wall_time: Optional[float] = Field(None, gt=0, description="seconds; None disables the cap")
    history: int = Field(8, ge=1)
    sufficient_decrease: float = Field(1e-4, gt=0, lt=1)
    curvature: float = Field(0.9, gt=0, lt=1)
    max_line_search: int = Field(25, ge=1)

    @model_validator(mode="after")
    def _wolfe_constants(self) -> "OptimizeOptions":
        if self.sufficient_decrease >= self.curvature:
            raise ValueError("sufficient_decrease must be smaller than curvature")
        return self


class LowMpcConfig(StrictModel):
    """Reference layer: first-order model with velocity inputs."""
    weights: Tuple[NonNegativeFloat, NonNegativeFloat, NonNegativeFloat] = (1.0, 10.0, 0.1)
    c_thr: float = Field(0.8, gt=0, description="safe distance threshold (m)")
    dt: float = Field(0.4, gt=0, description="knot spacing in time (s)")
    horizon: int = Field(12, ge=1, description="number of inputs M")
    reference_speed: float = Field(2.0, gt=0, description="nominal speed setting the guide spacing (m/s)")
    guide_clearance: float = Field(0.3, ge=0, description="A* inflation radius (m)")

    @property
    def guide_spacing(self) -> float:
        return self.reference_speed * self.dt


class Bounds(StrictModel):
    min: float
    max: float

    @model_validator(mode="after")
    def _ordered(self) -> "Bounds":
        if self.min > self.max:
            raise ValueError(f"min {self.min} exceeds max {self.max}")
        return self


class Limits(StrictModel):
    """Per-axis dynamic bounds, plus the progress speed range."""
    velocity: Bounds = Bounds(min=-3.0, max=3.0)
    acceleration: Bounds = Bounds(min=-5.0, max=5.0)
    jerk: Bounds = Bounds(min=-30.0, max=30.0)
    progress_velocity: Bounds = Bounds(min=0.0, max=3.0)

    @property
    def v_max(self) -> float:
        return max(abs(self.velocity.min), abs(self.velocity.max))


class HighMpccConfig(StrictModel):
    """Local contouring layer: triple integrators over x, y, z and progress."""
    weights: Tuple[
        NonNegativeFloat, NonNegativeFloat, NonNegativeFloat, NonNegativeFloat, NonNegativeFloat
    ] = (20.0, 2.0, 5.0, 30.0, 10.0)
    horizon: int = Field(40, ge=1)
    dt: float = Field(0.05, gt=0)
    v_thr: float = Field(0.1, gt=0, description="slow-speed floor inside the risk penalty (m/s)")
    c_thr: float = Field(0.3, gt=0, description="clearance below which the collision penalty acts (m)")
    risk_distance: float = Field(0.7, gt=0, description="clearance below which the risk penalty acts (m)")
    speed_smoothing: float = Field(1e-4, gt=0, description="epsilon of sqrt(|v|^2 + eps^2)")
    limits: Limits = Limits()
    solver: OptimizeOptions = OptimizeOptions(
        max_iterations=40, gradient_tolerance=1e-4, relative_cost_tolerance=1e-5
    )
    trace: bool = False


class SimConfig(StrictModel):
    tick: float = Field(0.01, gt=0, description="simulation step (s), 100 Hz")
    reference_period: float = Field(2.0, gt=0)
    control_period: float = Field(0.1, gt=0)
    timeout: float = Field(90.0, gt=0)
    goal_tolerance: float = Field(0.3, gt=0)
    collision_distance: float = Field(0.1, ge=0)
    sensing_radius: float = Field(4.0, gt=0)
    hazard_radius: float = Field(1.0, gt=0)
    clearance_band: float = Field(0.2, gt=0)


class PlannerConfig(StrictModel):
    version: int = SCHEMA_VERSION
    easa: EasaParams = EasaParams()
    optimizer: OptimizeOptions = OptimizeOptions()  # reference layer; the local layer uses high_mpcc.solver
    low_mpc: LowMpcConfig = LowMpcConfig()
    high_mpcc: HighMpccConfig = HighMpccConfig()
    sim: SimConfig = SimConfig()

    @field_validator("version")
    @classmethod
    def _supported_version(cls, value: int) -> int:
        if value != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {value}, expected {SCHEMA_VERSION}")
        return value

    def without_easa(self) -> "PlannerConfig":
        """Same config with the risk-penalty weight set to zero."""
        weights = list(self.high_mpcc.weights)
        weights[2] = 0.0
        return self.model_copy(
            update={"high_mpcc": self.high_mpcc.model_copy(update={"weights": tuple(weights)})}
        )


class MapSpec(StrictModel):
    generator: Optional[Literal["forest", "gate", "loop", "corridor"]] = None
    params: Dict[str, Union[bool, int, float]] = {}
    seed: int = 0
    file: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self) -> "MapSpec":
        if (self.generator is None) == (self.file is None):
            raise ValueError("exactly one of generator or file must be given")
        return self


class SensingSpec(StrictModel):
    mode: Literal["full", "range"] = "full"
    radius: Optional[float] = Field(None, gt=0)


class Scenario(StrictModel):
    name: str
    map: MapSpec
    start: Tuple[float, float, float]
    goal: Tuple[float, float, float]
    limits: Optional[Limits] = None
    sensing: SensingSpec = SensingSpec()
    planner: Dict[str, Any] = {}


class SweepSpec(StrictModel):
    """Parameter x values x seeds grid; the parameter is a dotted path rooted at
    ``scenario.`` or ``config.``."""
    parameter: str
    values: List[Union[bool, int, float, str]] = Field(min_length=1)
    seeds: List[int] = Field([0], min_length=1)

    @field_validator("parameter")
    @classmethod
    def _rooted(cls, value: str) -> str:
        root = value.split(".", 1)[0]
        if root not in ("scenario", "config") or "." not in value:
            raise ValueError("parameter must start with 'scenario.' or 'config.'")
        return value


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def apply_override(model: ModelT, dotted: str, value: Any) -> ModelT:
    """Return a re-validated copy of ``model`` with the field at ``dotted`` replaced."""
    data = model.model_dump(mode="json")
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ValueError(f"{dotted}: {key} is not a mapping")
    node[keys[-1]] = value
    return type(model).model_validate(data)


def effective_config(config: PlannerConfig, scenario: Scenario) -> PlannerConfig:
    """Merge the scenario's planner overrides and limits into ``config``."""
    data = deep_merge(config.model_dump(mode="json"), scenario.planner)
    if scenario.limits is not None:
        data["high_mpcc"]["limits"] = scenario.limits.model_dump(mode="json")
    return PlannerConfig.model_validate(data)


def _line_of(text: str, loc: Tuple[Any, ...]) -> int:
    """Line (1-based) of the deepest YAML node reachable along ``loc``."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return 1
    line = 1
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                if key_node.value == str(key):
                    line = key_node.start_mark.line + 1
                    node = value_node
                    break
            else:
                break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def parse_document(text: str, model: Type[ModelT], source: str = "<string>") -> ModelT:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(source, line, f"malformed YAML: {getattr(e, 'problem', e)}")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(source, 1, "top level must be a mapping")
    try:
        return model.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = tuple(first["loc"])
        where = ".".join(str(part) for part in loc) or "<document>"
        raise ConfigError(source, _line_of(text, loc), f"{where}: {first['msg']}")


def load_document(path: Union[str, Path], model: Type[ModelT]) -> ModelT:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(str(path), 0, f"cannot read: {e.strerror}")
    return parse_document(text, model, source=str(path))


def load_config(path: Union[str, Path]) -> PlannerConfig:
    return load_document(path, PlannerConfig)


def load_scenario(path: Union[str, Path]) -> Scenario:
    return load_document(path, Scenario)


def load_sweep(path: Union[str, Path]) -> SweepSpec:
    return load_document(path, SweepSpec)


def dump_document(model: BaseModel) -> str:
    return yaml.safe_dump(model.model_dump(mode="json"), sort_keys=False, default_flow_style=None)


def dump_config(config: PlannerConfig) -> str:
    return dump_document(config)

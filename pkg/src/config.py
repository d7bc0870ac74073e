"""
Config - Run configuration for the command-line front end.

Settings come from three places:
- LOCFISHER_THREADS in the environment (a local .env file is honored)
- a JSON config file passed with --config
- command-line flags, which override the file

Everything is validated by pydantic before any computation starts. The
effective configuration (defaults resolved) is echoed into every output so
a run can be reproduced from its own metadata.
"""

import json
import logging
import os
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

THREADS_ENV = "LOCFISHER_THREADS"
MAX_DEFAULT_WORKERS = 8

PRESET_NAMES = ("two_level_single", "two_level_iid2", "two_level_ent2", "leaky_qutrit")

# A complex number in JSON: a plain number, a decimal string, or an [re, im] pair
JsonComplex = Union[float, str, List[Union[float, str]]]
JsonMatrix = List[List[JsonComplex]]


def worker_count() -> int:
    """
    Worker pool size: LOCFISHER_THREADS if set, else min(8, cpu count).

    Raises:
        ConfigurationError: If LOCFISHER_THREADS is not a positive integer
    """
    raw = os.getenv(THREADS_ENV)
    if raw is None or not raw.strip():
        return min(MAX_DEFAULT_WORKERS, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be positive, got {n}")
    return n


class ModelSpec(BaseModel):
    """A preset model, or a custom polynomial Hamiltonian H(g) = sum_k g^k C_k."""
    name: str = "two_level_single"
    gamma_plus: float = 2.0
    gamma_minus: float = 1.0
    omega: float = 1.0  # leaky_qutrit: coupling inside M
    kappa: float = 1.0  # leaky_qutrit: leak coupling at g = 0
    hamiltonian: Optional[List[JsonMatrix]] = None  # custom: coefficients C_0, C_1, ...
    hermitian: bool = False
    accessible: Optional[List[int]] = None  # custom Hermitian: basis indices spanning M
    initial_state: Optional[JsonMatrix] = None  # custom: density matrix on M

    @field_validator("gamma_plus", "gamma_minus")
    @classmethod
    def _positive_rate(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("decay rates must be positive")
        return v

    @model_validator(mode="after")
    def _check_model(self) -> "ModelSpec":
        if self.hamiltonian is None:
            if self.name not in PRESET_NAMES:
                raise ValueError(f"unknown preset {self.name!r}; choose one of {', '.join(PRESET_NAMES)}")
            if self.name.startswith("two_level") and self.gamma_plus == self.gamma_minus:
                raise ValueError("gamma_plus and gamma_minus must differ")
        else:
            if not self.hamiltonian:
                raise ValueError("custom hamiltonian needs at least one coefficient matrix")
            if self.hermitian and not self.accessible:
                raise ValueError("a Hermitian custom model needs the accessible basis indices")
        return self

    @property
    def is_preset(self) -> bool:
        return self.hamiltonian is None

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ModelSpec":
        return cls.model_validate_json(Path(path).read_text())


class TimeGrid(BaseModel):
    start: float = 0.05
    stop: float = 3.0
    points: int = 50
    scale: Literal["lin", "log"] = "lin"

    @model_validator(mode="after")
    def _check_grid(self) -> "TimeGrid":
        if self.points < 1:
            raise ValueError("time grid must have at least one point")
        if self.start < 0 or self.stop < self.start:
            raise ValueError(f"invalid time range [{self.start}, {self.stop}]")
        if self.scale == "log" and self.start <= 0:
            raise ValueError("log-spaced grid needs start > 0")
        return self

    def values(self) -> np.ndarray:
        if self.points == 1:
            return np.array([self.start])
        if self.scale == "log":
            return np.geomspace(self.start, self.stop, self.points)
        return np.linspace(self.start, self.stop, self.points)


class CompositeOptions(BaseModel):
    n_subsystems: int = Field(default=1, ge=1, le=4)
    initial: Literal["iid", "entangled", "file"] = "iid"
    initial_file: Optional[str] = None  # JSON density matrix on M^{tensor N}
    method: Literal["channels", "direct"] = "channels"
    derivative: Literal["analytic", "finite_difference"] = "analytic"

    @model_validator(mode="after")
    def _check_initial(self) -> "CompositeOptions":
        if self.initial == "file" and not self.initial_file:
            raise ValueError("initial='file' requires initial_file")
        if self.initial == "entangled" and self.n_subsystems != 2:
            raise ValueError("the entangled preset state is defined for N = 2")
        if self.method == "direct" and self.n_subsystems > 3:
            raise ValueError("the direct path supports N <= 3")
        return self


class MonteCarloOptions(BaseModel):
    shots: int = Field(default=100_000, ge=1)
    repeats: int = Field(default=10, ge=1)
    seed: int = Field(default=20240601, ge=0)
    estimator: Literal["optimal", "alternative", "sigma_y", "sigma_x"] = "optimal"
    t: Optional[float] = Field(default=None, ge=0)  # None: optimal time of the model
    n_average: int = Field(default=1, ge=1)
    batch_size: int = Field(default=1_000_000, ge=1)


class OutputOptions(BaseModel):
    path: Optional[str] = None
    format: Literal["csv", "json"] = "csv"


class RunConfig(BaseModel):
    """Everything a computing command needs, validated up front."""
    command: Literal["fisher-sweep", "composite", "montecarlo", "validate"] = "fisher-sweep"
    model: ModelSpec = Field(default_factory=ModelSpec)
    g: float = 1e-4
    t_grid: TimeGrid = Field(default_factory=TimeGrid)
    composite: CompositeOptions = Field(default_factory=CompositeOptions)
    montecarlo: MonteCarloOptions = Field(default_factory=MonteCarloOptions)
    output: OutputOptions = Field(default_factory=OutputOptions)

    def echo(self) -> dict:
        """Effective configuration as plain JSON."""
        return self.model_dump(mode="json")


def load_run_config(path: Optional[Union[str, Path]] = None, **overrides) -> RunConfig:
    """
    Build a RunConfig from an optional JSON file plus flag overrides.

    Overrides are nested dicts keyed like the RunConfig fields; None values
    are ignored so unset flags keep the file's (or default) value.

    Raises:
        ConfigurationError: If the file is unreadable or the result fails validation
    """
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read config {path}: {e}")
    _merge(data, overrides)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(str(e))
    logger.debug(f"effective config: {config.echo()}")
    return config


def _merge(target: dict, overrides: dict):
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            _merge(target.setdefault(key, {}), value)
        else:
            target[key] = value

"""
Configuration Schemas
=====================

Pydantic models for every structured configuration used by lipirm, plus
loading of experiment files (TOML, or JSON as a mirror) and a generated
reference of all defaults.

Unknown keys are rejected everywhere (``extra="forbid"``), so a typo in a
config file fails loudly instead of being ignored.
"""

import json
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

METHODS = ("erm_l2", "erm_lip", "irm_l2", "irm_lip", "rpo", "rpo_lip", "rpo_pen")

CONFOUNDER_PRESETS: Dict[str, Dict[str, Any]] = {
    "wage": {"train_alpha": [0.1, 0.2, 0.3], "validation_alpha": 1.0, "test_alpha": [2.0, 3.0, 4.0, 5.0]},
    "cigar": {"train_alpha": [10.0, 15.0, 20.0], "validation_alpha": 80.0, "test_alpha": [100.0, 150.0, 200.0, 300.0]},
}

# (group, domain) targets on the three training domains 0, 1, 2
_SETTING1 = [(0, 2), (1, 2), (2, 2)]
_SETTING7 = [(0, 0), (0, 1), (0, 2)]
TWO_BIT_PRESETS: Dict[str, List[Tuple[int, int]]] = {
    "setting1": _SETTING1,
    "setting7": _SETTING7,
    "setting13": sorted(set(_SETTING7) | set(_SETTING1)),
}


class ConfigError(Exception):
    """Exception raised when a configuration file is missing, unreadable or invalid."""

    pass


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


def _probability(v: float, name: str) -> float:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return v


class NoiseProfile(StrictModel):
    """
    Noise standard deviation σ(x) of one 1-D domain.

    ``constant``: σ; ``linear``: σ + (sigma_end − σ) x; ``piecewise``:
    ``levels[i]`` on the i-th of ``len(levels)`` equal-width intervals.
    """

    kind: Literal["constant", "piecewise", "linear"] = "constant"
    sigma: float = 0.05
    sigma_end: float = 0.05
    levels: List[float] = Field(default_factory=lambda: [0.05])

    @field_validator("sigma", "sigma_end")
    @classmethod
    def validate_sigma(cls, v: float) -> float:
        """Ensure the noise level is non-negative and finite."""
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"noise level must be finite and >= 0, got {v}")
        return v

    @field_validator("levels")
    @classmethod
    def validate_levels(cls, v: List[float]) -> List[float]:
        """Ensure at least one non-negative level is given."""
        if not v:
            raise ValueError("piecewise noise needs at least one level")
        if any(not math.isfinite(s) or s < 0 for s in v):
            raise ValueError(f"noise levels must be finite and >= 0, got {v}")
        return v


class Domain1DSpec(StrictModel):
    """One 1-D domain: sample size, density skew k (r(x) = (k+1)(1−x)^k) and noise."""

    size: int = 2000
    skew: float = 0.0
    noise: NoiseProfile = Field(default_factory=NoiseProfile)

    @field_validator("size")
    @classmethod
    def validate_size(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"domain size must be >= 1, got {v}")
        return v

    @field_validator("skew")
    @classmethod
    def validate_skew(cls, v: float) -> float:
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"skew k must be finite and >= 0, got {v}")
        return v


class Regression1DConfig(StrictModel):
    """Heteroskedastic 1-D regression on [0, 1] with analytic ground truth."""

    truth: Literal["sine", "cosine", "quadratic", "linear", "constant"] = "sine"
    offset: float = 2.0
    domains: List[Domain1DSpec] = Field(default_factory=lambda: [Domain1DSpec()])
    test_domains: List[Domain1DSpec] = Field(default_factory=list)
    seed: int = 0

    @field_validator("domains")
    @classmethod
    def validate_domains(cls, v: List[Domain1DSpec]) -> List[Domain1DSpec]:
        if not v:
            raise ValueError("at least one training domain is required")
        return v


class ConfounderConfig(StrictModel):
    """
    Confounded multi-domain regression: y = X β + noise, Z = W y + α_e V.

    Missing α lists are taken from ``preset``.
    """

    preset: Literal["wage", "cigar", "custom"] = "wage"
    base_dim: int = 5
    confounder_dim: int = 5
    n_per_domain: int = 1000
    noise_sd: float = 1.0
    train_alpha: Optional[List[float]] = None
    validation_alpha: Optional[float] = None
    test_alpha: Optional[List[float]] = None
    seed: int = 0

    @field_validator("base_dim", "confounder_dim", "n_per_domain")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"must be >= 1, got {v}")
        return v

    @model_validator(mode="after")
    def fill_preset(self) -> "ConfounderConfig":
        """Fill α values from the preset and check their ordering."""
        if self.preset == "custom":
            if self.train_alpha is None or self.test_alpha is None:
                raise ValueError("custom preset needs train_alpha and test_alpha")
        else:
            preset = CONFOUNDER_PRESETS[self.preset]
            if self.train_alpha is None:
                self.train_alpha = list(preset["train_alpha"])
            if self.validation_alpha is None:
                self.validation_alpha = preset["validation_alpha"]
            if self.test_alpha is None:
                self.test_alpha = list(preset["test_alpha"])
        alphas = list(self.train_alpha) + list(self.test_alpha)
        if self.validation_alpha is not None:
            alphas.append(self.validation_alpha)
        if not self.train_alpha or any(not math.isfinite(a) or a < 0 for a in alphas):
            raise ValueError(f"alpha values must be finite and >= 0, got {alphas}")
        if self.test_alpha and max(self.train_alpha) >= min(self.test_alpha):
            raise ValueError("training alphas must stay below every test alpha")
        return self


class CorruptionSpec(StrictModel):
    """Targeted (group, domain) cells keep a sample w.p. ``beta`` and flip its label w.p. ``gamma``."""

    targets: List[Tuple[int, int]] = Field(default_factory=list)
    beta: float = 0.1
    gamma: float = 0.3

    @field_validator("beta")
    @classmethod
    def validate_beta(cls, v: float) -> float:
        return _probability(v, "beta")

    @field_validator("gamma")
    @classmethod
    def validate_gamma(cls, v: float) -> float:
        return _probability(v, "gamma")


class TwoBitConfig(StrictModel):
    """
    Two-bit classification with a causal and a spurious feature.

    Training domains get ids 0.., then validation, then test domains.
    """

    causal_flip: float = 0.25
    train_flips: List[float] = Field(default_factory=lambda: [0.1, 0.2, 0.3])
    validation_flips: List[float] = Field(default_factory=lambda: [0.5])
    test_flips: List[float] = Field(default_factory=lambda: [0.7, 0.8, 0.9, 1.0])
    n_groups: int = 10
    n_per_domain: int = 2000
    preset: Literal["setting1", "setting7", "setting13", "none"] = "none"
    corruption: Optional[CorruptionSpec] = None
    seed: int = 0

    @field_validator("causal_flip")
    @classmethod
    def validate_causal(cls, v: float) -> float:
        return _probability(v, "causal_flip")

    @field_validator("train_flips", "validation_flips", "test_flips")
    @classmethod
    def validate_flips(cls, v: List[float]) -> List[float]:
        for p in v:
            _probability(p, "spurious flip")
        return v

    @field_validator("n_groups", "n_per_domain")
    @classmethod
    def validate_counts(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"must be >= 1, got {v}")
        return v

    @model_validator(mode="after")
    def expand_preset(self) -> "TwoBitConfig":
        """Expand a named preset into its corruption targets."""
        if not self.train_flips:
            raise ValueError("at least one training domain is required")
        if self.preset != "none":
            if self.corruption is not None and self.corruption.targets:
                raise ValueError("give either a preset or explicit corruption targets, not both")
            base = self.corruption or CorruptionSpec()
            self.corruption = base.model_copy(update={"targets": list(TWO_BIT_PRESETS[self.preset])})
        if self.corruption is not None:
            for group, domain in self.corruption.targets:
                if not 0 <= group < self.n_groups or not 0 <= domain < len(self.train_flips):
                    raise ValueError(f"corruption target ({group}, {domain}) is not a training cell")
        return self


class SolverConfig(StrictModel):
    """Settings of the 1-D functional solver."""

    n_grid: int = 513
    max_outer_iters: int = 200
    max_inner_iters: int = 30
    step_size: float = 1.0
    tolerance: float = 1e-10
    init: Literal["mean", "zeros"] = "mean"
    bracket: Literal["prediction", "label"] = "prediction"
    normalization: Literal["mean", "sum"] = "mean"
    lipschitz_weighting: Literal["samples", "importance"] = "samples"
    ridge: float = 1e-10
    convexity_floor: float = 1e-6

    @field_validator("n_grid")
    @classmethod
    def validate_grid(cls, v: int) -> int:
        if v < 3:
            raise ValueError(f"n_grid must be >= 3, got {v}")
        return v

    @field_validator("max_outer_iters", "max_inner_iters")
    @classmethod
    def validate_iters(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"iteration counts must be >= 1, got {v}")
        return v

    @field_validator("step_size")
    @classmethod
    def validate_step(cls, v: float) -> float:
        if not 0 < v <= 1:
            raise ValueError(f"step_size must lie in (0, 1], got {v}")
        return v

    @field_validator("tolerance", "convexity_floor")
    @classmethod
    def validate_tolerance(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"must be > 0, got {v}")
        return v

    @field_validator("ridge")
    @classmethod
    def validate_ridge(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"ridge must be >= 0, got {v}")
        return v


class RpoConfig(StrictModel):
    """Training settings shared by all methods, and the RPO-specific knobs."""

    grouping_mode: Literal["bins", "label", "provided"] = "provided"
    k_per_domain: int = 4
    feature_index: int = 0
    fd_step: float = 1e-3
    rho_floor: float = 1e-6
    eta_cap: float = 1e6
    lambda_mode: Literal["prop1", "fixed"] = "prop1"
    fixed_lambda: float = 0.1
    hidden: int = 16
    depth: int = 3
    epochs: int = 300
    learning_rate: float = 0.05
    optimizer: Literal["gd", "adam"] = "gd"
    batch_size: Optional[int] = None
    log_every: int = 50
    freeze_phase2_penalties: bool = False

    @field_validator("fd_step", "rho_floor", "eta_cap", "fixed_lambda", "learning_rate")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not math.isfinite(v) or v <= 0:
            raise ValueError(f"must be positive and finite, got {v}")
        return v

    @field_validator("k_per_domain", "hidden", "depth", "epochs", "log_every")
    @classmethod
    def validate_counts(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"must be >= 1, got {v}")
        return v

    @field_validator("batch_size")
    @classmethod
    def validate_batch(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError(f"batch_size must be >= 1, got {v}")
        return v


class PenaltyOverrides(StrictModel):
    """Uniform penalty values replacing the defaults of non-optimized methods."""

    lambda_: Optional[float] = Field(default=None, alias="lambda")
    eta: float = 1.0
    rho: float = 1.0

    @field_validator("lambda_")
    @classmethod
    def validate_lambda(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and (not math.isfinite(v) or v <= 0):
            raise ValueError(f"lambda must be positive, got {v}")
        return v

    @field_validator("eta")
    @classmethod
    def validate_eta(cls, v: float) -> float:
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"eta must be >= 0, got {v}")
        return v

    @field_validator("rho")
    @classmethod
    def validate_rho(cls, v: float) -> float:
        if not math.isfinite(v) or v <= 0:
            raise ValueError(f"rho must be > 0, got {v}")
        return v


class BenchmarkSpec(StrictModel):
    """Benchmark id and the parameters handed to its generator."""

    name: str = "two_bit"
    params: Dict[str, Any] = Field(default_factory=dict)


class TheoryConfig(StrictModel):
    """Settings of ``lipirm theory``: a 1-D setting and the scheme to evaluate."""

    setting: Regression1DConfig = Field(default_factory=Regression1DConfig)
    n_grid: int = 513
    lambda_: Optional[float] = Field(default=None, alias="lambda")
    eta: float = 0.0
    rho: float = 1.0
    green_method: Literal["wkb", "discrete"] = "discrete"
    green_slices: List[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75])

    @field_validator("n_grid")
    @classmethod
    def validate_grid(cls, v: int) -> int:
        if v < 6:
            raise ValueError(f"n_grid must be >= 6, got {v}")
        return v


class OracleConfig(StrictModel):
    """Sizes of the acceptance oracles run by ``lipirm oracle``."""

    checks: List[str] = Field(default_factory=list)
    seeds: int = 10
    replications: int = 200
    quick: bool = False

    @field_validator("seeds", "replications")
    @classmethod
    def validate_counts(cls, v: int) -> int:
        if v < 2:
            raise ValueError(f"must be >= 2, got {v}")
        return v


class ExperimentConfig(StrictModel):
    """Top-level experiment file."""

    benchmark: BenchmarkSpec = Field(default_factory=BenchmarkSpec)
    methods: List[str] = Field(default_factory=lambda: ["irm_lip", "rpo"])
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    master_seed: int = 0
    reference_method: str = "rpo"
    output_dir: Optional[str] = None
    jobs: int = 1
    rpo: RpoConfig = Field(default_factory=RpoConfig)
    penalties: PenaltyOverrides = Field(default_factory=PenaltyOverrides)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    theory: TheoryConfig = Field(default_factory=TheoryConfig)
    oracle: OracleConfig = Field(default_factory=OracleConfig)

    @field_validator("methods")
    @classmethod
    def validate_methods(cls, v: List[str]) -> List[str]:
        """Ensure every method is known and listed once."""
        unknown = [m for m in v if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; expected a subset of {list(METHODS)}")
        if len(set(v)) != len(v):
            raise ValueError(f"methods must be unique, got {v}")
        return v

    @field_validator("seeds")
    @classmethod
    def validate_seeds(cls, v: List[int]) -> List[int]:
        if not v or any(s < 0 for s in v):
            raise ValueError(f"seeds must be a non-empty list of non-negative integers, got {v}")
        return v

    @field_validator("jobs")
    @classmethod
    def validate_jobs(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"jobs must be >= 1, got {v}")
        return v


def format_validation_error(error: ValidationError, source: Union[str, Path] = "<config>") -> str:
    """One line per failing key path, ``a.b.c: message``."""
    lines = [f"Invalid configuration in {source}:"]
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"  {path}: {item['msg']}")
    return "\n".join(lines)


def parse_config(raw: Dict[str, Any], model=ExperimentConfig, source: Union[str, Path] = "<config>"):
    """Validate a raw mapping against ``model``, raising ConfigError on failure."""
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e, source)) from e


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a TOML or JSON file into a dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        if path.suffix == ".json":
            with open(path, "r") as f:
                return json.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, OSError) as e:
        raise ConfigError(f"Failed to read config file {path}: {str(e)}") from e
    raise ConfigError(f"Unsupported config format '{path.suffix}' for {path}; use .toml or .json")


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load and validate an experiment file.

    Parameters
    ----------
    path : str or Path
        ``.toml`` file, or ``.json`` with the same structure.

    Returns
    -------
    ExperimentConfig

    Raises
    ------
    ConfigError
        If the file is missing or unreadable, or if validation fails; the
        message lists every failing key path.
    """
    return parse_config(read_config_file(path), ExperimentConfig, path)


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return json.dumps(value)


def _render_section(name: str, data: Dict[str, Any], lines: List[str]) -> None:
    scalars = {k: v for k, v in data.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in data.items() if isinstance(v, dict)}
    if name:
        lines.append(f"[{name}]")
    for key, value in scalars.items():
        if value is None:
            lines.append(f"# {key} = (unset)")
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            lines.append(f"# {key}: list of tables, e.g. {json.dumps(value[0])}")
        else:
            lines.append(f"{key} = {_toml_value(value)}")
    lines.append("")
    for key, value in tables.items():
        _render_section(f"{name}.{key}" if name else key, value, lines)


def defaults_reference() -> str:
    """Render the defaults of :class:`ExperimentConfig` as a commented TOML document."""
    lines = [
        "# lipirm experiment configuration: all keys with their defaults.",
        "# Unknown keys are rejected. benchmark.params is validated by the",
        "# selected benchmark's own schema (see `lipirm gen --help`).",
        "",
    ]
    _render_section("", ExperimentConfig().model_dump(by_alias=True, mode="json"), lines)
    return "\n".join(lines).rstrip() + "\n"

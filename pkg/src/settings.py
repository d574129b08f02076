"""Run configuration: YAML file validated into nested pydantic sections."""

from pathlib import Path
from typing import Dict, List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

import config
from errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsSection(_Section):
    nodes: Optional[str] = None
    gdm: Optional[str] = None
    comparable: Optional[str] = None
    responses: Optional[str] = None
    pathways: Optional[str] = None
    genotypes: Optional[str] = None
    grid_nodes: Optional[str] = None
    truth: Optional[str] = None
    chains: List[str] = Field(default_factory=list)
    out: str = "runs/out"


class ModelSection(_Section):
    variant: str = "full"

    @field_validator("variant")
    @classmethod
    def _known_variant(cls, value: str) -> str:
        if value not in config.MODEL_VARIANTS:
            raise ValueError(f"variant must be one of {sorted(config.MODEL_VARIANTS)}")
        return value


class PriorSection(_Section):
    Q: int = Field(config.DEFAULT_Q, ge=1)
    var_alpha: float = Field(config.VAR_ALPHA, gt=0)
    var_beta: float = Field(config.VAR_BETA, gt=0)
    ig_shape_sigma2: float = Field(config.IG_SHAPE_SIGMA2, gt=0)
    ig_rate_sigma2: float = Field(config.IG_RATE_SIGMA2, gt=0)
    ig_shape_eta: float = Field(config.IG_SHAPE_ETA, gt=0)
    ig_rate_eta: float = Field(config.IG_RATE_ETA, gt=0)
    var_logphi: float = Field(config.VAR_LOGPHI, gt=0)
    slice_w0: float = Field(config.SLICE_W0, gt=0)
    slice_max_stepout: int = Field(config.SLICE_MAX_STEPOUT, ge=1)
    rw_frac: float = Field(config.RW_FRAC, gt=0)
    eta_kernel: str = config.ETA_KERNEL
    factor_kernel: str = config.FACTOR_KERNEL

    @field_validator("eta_kernel", "factor_kernel")
    @classmethod
    def _known_kernel(cls, value: str) -> str:
        if value not in config.KERNELS:
            raise ValueError(f"kernel must be one of {list(config.KERNELS)}")
        return value

    def overrides(self) -> Dict:
        """PriorConfig fields other than those make_prior derives itself."""
        return self.model_dump(exclude={"Q", "var_logphi"})


class ScheduleSection(_Section):
    iterations: int = Field(config.DEFAULT_ITERATIONS, ge=1)
    burnin_fraction: float = Field(config.DEFAULT_BURNIN_FRACTION, ge=0.0, lt=1.0)
    thin: int = Field(config.DEFAULT_THIN, ge=1)
    chains: int = Field(config.DEFAULT_CHAINS, ge=1)
    save_factor_draws: bool = True
    factor_slice: bool = True
    progress: bool = True

    @property
    def burnin(self) -> int:
        return int(round(self.burnin_fraction * self.iterations))


class DesignSection(_Section):
    rbf_centers: int = Field(config.DEFAULT_RBF_CENTERS, ge=0)
    rbf_seed: int = 0
    standardize_connectivity: bool = True
    tau: Dict[str, float] = Field(default_factory=dict)
    comparable_loci: int = Field(config.DEFAULT_COMPARABLE_LOCI, ge=1)

    @field_validator("tau")
    @classmethod
    def _positive_tau(cls, value: Dict[str, float]) -> Dict[str, float]:
        for name, tau in value.items():
            if not tau > 0:
                raise ValueError(f"tau for class '{name}' must be > 0")
        return value


class MappingSection(_Section):
    max_draws: int = Field(config.MAP_MAX_DRAWS, ge=1)
    max_grid_dyads: int = Field(config.MAP_MAX_GRID_DYADS, ge=1)


class ScoringSection(_Section):
    near_clonal_threshold: int = Field(config.NEAR_CLONAL_THRESHOLD, ge=0)
    credible_level: float = Field(config.CREDIBLE_LEVEL, gt=0.0, lt=1.0)


class IngestSection(_Section):
    per_chromosome: int = Field(config.LOCI_PER_CHROMOSOME, ge=1)
    allele_distance: bool = False


class SimulateSection(_Section):
    n: int = Field(100, ge=4)
    p: int = Field(4, ge=1)
    Q: int = Field(config.DEFAULT_Q, ge=1)
    alpha: float = 10.0
    beta: List[float] = Field(default_factory=lambda: [2.88, 3.64, 3.76, 4.35, 2.00, -1.30])
    sigma2: float = Field(5.0, ge=0)
    sigma2_eta: float = Field(5.0, ge=0)
    phi_eta: Optional[float] = Field(None, gt=0)
    tau: float = Field(config.DEFAULT_TAU, gt=0)
    active_factors: Optional[int] = Field(None, ge=0)
    standardize_connectivity: bool = True


class RunConfig(_Section):
    """Every setting a subcommand may read."""

    seed: int = 0
    workers: int = Field(config.MAX_WORKERS, ge=1)
    paths: PathsSection = Field(default_factory=PathsSection)
    model: ModelSection = Field(default_factory=ModelSection)
    prior: PriorSection = Field(default_factory=PriorSection)
    schedule: ScheduleSection = Field(default_factory=ScheduleSection)
    design: DesignSection = Field(default_factory=DesignSection)
    mapping: MappingSection = Field(default_factory=MappingSection)
    scoring: ScoringSection = Field(default_factory=ScoringSection)
    ingest: IngestSection = Field(default_factory=IngestSection)
    simulate: SimulateSection = Field(default_factory=SimulateSection)

    def require_paths(self, subcommand: str) -> None:
        """
        Checks that every input the subcommand reads exists.

        Raises:
            ConfigError: Naming each missing or unset input
        """
        p = self.paths
        problems = []

        def need(label: str, value: Optional[str]):
            if not value:
                problems.append(f"paths.{label} is not set")
            elif not Path(value).exists():
                problems.append(f"paths.{label} does not exist: {value}")

        def need_response():
            if p.responses:
                need("responses", p.responses)
            else:
                need("gdm", p.gdm)

        if subcommand == "ingest":
            need("genotypes", p.genotypes)
        elif subcommand in ("fit", "score", "map"):
            need("nodes", p.nodes)
            if subcommand != "map":
                need_response()
            if p.pathways:
                need("pathways", p.pathways)
            if subcommand in ("score", "map"):
                if not p.chains:
                    problems.append("paths.chains is empty")
                for k, chain in enumerate(p.chains):
                    need(f"chains[{k}]", chain)
            if subcommand == "map":
                need("grid_nodes", p.grid_nodes)
            if subcommand == "score" and p.truth:
                need("truth", p.truth)
        elif subcommand != "simulate":
            problems.append(f"unknown subcommand '{subcommand}'")
        if problems:
            raise ConfigError("; ".join(problems))


def load_config(path: Optional[str] = None, overrides: Optional[Dict] = None) -> RunConfig:
    """
    Reads and validates a YAML run configuration.

    Args:
        path: YAML file, or None for defaults
        overrides: Dotted keys ("schedule.iterations") replacing file values

    Returns:
        RunConfig
    """
    raw: Dict = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config file is not valid YAML: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping at the top level")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e)) from e

from pydantic import BaseModel, Field, model_validator
from typing import List, Optional, Dict, Any, Tuple
from enum import Enum

from config import DEFAULT_ALPHA, DEFAULT_ALPHAS, DEFAULT_TOP_K, DEFAULT_SCENARIO, DESK_DEFAULTS


class StatisticKind(str, Enum):
    EB_ZIP = "eb-zip"
    EB_POISSON = "eb-poisson"


class ZoneMethod(str, Enum):
    KNN = "knn"
    FLEX = "flex"


class PValueMethod(str, Enum):
    MONTE_CARLO = "monte-carlo"
    GUMBEL = "gumbel"
    EMPIRICAL = "empirical"


class Window(BaseModel):
    zone_index: int = Field(ge=0)
    members: Tuple[int, ...]
    duration: int = Field(ge=1)


class WindowScore(BaseModel):
    window: Optional[Window] = None
    q_hat: float = Field(ge=1.0)
    llr: float = Field(ge=0.0)
    em_iterations: int = Field(default=0, ge=0)
    converged: bool = True


class ScanResult(BaseModel):
    statistic: float = Field(ge=0.0)
    mlc: WindowScore
    ranked: List[WindowScore]
    kind: StatisticKind
    n_zones: int
    n_windows: int
    nonconverged_windows: int = 0

    @model_validator(mode="after")
    def check_statistic_is_top(self):
        if self.ranked and self.ranked[0].llr != self.statistic:
            raise ValueError("statistic must equal the top ranked window score")
        return self


class ReplicateSet(BaseModel):
    values: List[float]
    master_seed: Optional[int] = None
    kind: Optional[StatisticKind] = None
    replicate_indices: Optional[List[int]] = None

    @model_validator(mode="after")
    def check_values(self):
        if len(self.values) < 1:
            raise ValueError("a replicate set needs at least one value")
        if any(v < 0 for v in self.values):
            raise ValueError("scan statistics are non-negative")
        return self

    @property
    def size(self) -> int:
        return len(self.values)


class GumbelParams(BaseModel):
    location: float
    scale: float = Field(gt=0.0)


class PValueReport(BaseModel):
    observed: float
    method: PValueMethod
    p_value: float = Field(gt=0.0, le=1.0)
    reference_size: int
    zero_fraction: Optional[float] = None
    gumbel: Optional[GumbelParams] = None


class Scenario(BaseModel):
    name: Optional[str] = None
    n_locations: int = Field(default=DEFAULT_SCENARIO["n_locations"], ge=2)
    p: float = Field(ge=0.0, lt=1.0)
    mu: float = Field(gt=0.0)
    q: float = Field(default=1.0, ge=1.0)
    outbreak_size: int = Field(default=20, ge=1)
    outbreak_zone: Optional[List[int]] = None
    pre_weeks: int = Field(default=DEFAULT_SCENARIO["pre_weeks"], ge=0)
    outbreak_weeks: int = Field(default=DEFAULT_SCENARIO["outbreak_weeks"], ge=1)
    max_duration: int = Field(default=DEFAULT_SCENARIO["max_duration"], ge=1)
    k_max: int = Field(default=DEFAULT_SCENARIO["k_max"], ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def check_scenario(self):
        if self.outbreak_zone is not None and len(self.outbreak_zone) == 0:
            raise ValueError("outbreak zone must be non-empty")
        if self.outbreak_size > self.n_locations:
            raise ValueError("outbreak_size exceeds n_locations")
        if self.k_max + 1 > self.n_locations:
            raise ValueError("k_max + 1 exceeds n_locations")
        if self.max_duration > self.pre_weeks + self.outbreak_weeks:
            raise ValueError("max_duration exceeds the simulated weeks")
        return self

    @property
    def is_null(self) -> bool:
        return self.q == 1.0

    @property
    def total_weeks(self) -> int:
        return self.pre_weeks + self.outbreak_weeks

    def label(self) -> str:
        return self.name or f"n{self.n_locations}_p{self.p:g}_mu{self.mu:g}_q{self.q:g}_s{self.outbreak_size}"


class DetectionMetrics(BaseModel):
    detection_week: Optional[int] = None
    precision: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    recall: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    f_score: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    detected_zone: Optional[List[int]] = None
    pvalues: List[float] = []


class ZoneConfig(BaseModel):
    zone_method: ZoneMethod = ZoneMethod.KNN
    k_max: Optional[int] = Field(default=None, ge=0)
    max_size: Optional[int] = Field(default=None, ge=1)
    adjacency_k: Optional[int] = Field(default=None, ge=1)
    adjacency_path: Optional[str] = None
    geometry_path: Optional[str] = None

    @model_validator(mode="after")
    def check_zones(self):
        if self.zone_method == ZoneMethod.FLEX:
            if self.max_size is None:
                raise ValueError("flex zones need max_size")
            if self.adjacency_k is None and self.adjacency_path is None:
                raise ValueError("flex zones need an adjacency (adjacency_k or adjacency_path)")
        return self


class RunConfig(ZoneConfig):
    statistic: StatisticKind = StatisticKind.EB_ZIP
    max_duration: Optional[int] = Field(default=None, ge=1)
    pvalue: PValueMethod = PValueMethod.MONTE_CARLO
    replicates: Optional[int] = Field(default=999, ge=1)
    history_path: Optional[str] = None
    history_window: Optional[int] = Field(default=None, ge=1)
    alpha: float = Field(default=DEFAULT_ALPHA, gt=0.0, lt=1.0)
    top_k: int = Field(default=DEFAULT_TOP_K, ge=1)
    seed: Optional[int] = None
    threads: int = Field(default=1, ge=1)
    counts_path: Optional[str] = None
    baselines_path: Optional[str] = None
    out_path: Optional[str] = None

    @model_validator(mode="after")
    def check_inference(self):
        if self.pvalue == PValueMethod.EMPIRICAL:
            if not self.history_path:
                raise ValueError("empirical P-values need a history file")
        else:
            if self.seed is None:
                raise ValueError(f"{self.pvalue.value} P-values are stochastic: a seed is mandatory")
            if not self.replicates:
                raise ValueError("replicate count required")
            if self.pvalue == PValueMethod.GUMBEL and self.replicates < 2:
                raise ValueError("Gumbel fit needs at least 2 replicates")
        return self

    def echo(self) -> Dict[str, Any]:
        # threads never changes an output byte
        return self.model_dump(mode="json", exclude={"threads"})


class ExperimentConfig(BaseModel):
    scenarios: List[Scenario]
    alphas: List[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS))
    methods: List[StatisticKind] = Field(default_factory=lambda: [StatisticKind.EB_ZIP, StatisticKind.EB_POISSON])
    replicates: int = Field(default=DESK_DEFAULTS["replicates"], ge=1)
    outbreaks_per_scenario: int = Field(default=DESK_DEFAULTS["outbreaks_per_scenario"], ge=1)
    master_seed: int = 0
    pvalue: PValueMethod = PValueMethod.GUMBEL
    estimate_baselines: bool = False
    threads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_experiment(self):
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        if not self.methods:
            raise ValueError("at least one statistic is required")
        if any(not 0.0 < a < 1.0 for a in self.alphas):
            raise ValueError("alphas must lie in (0, 1)")
        if self.pvalue == PValueMethod.EMPIRICAL:
            raise ValueError("the harness computes P-values from simulated replicates")
        if self.pvalue == PValueMethod.GUMBEL and self.replicates < 2:
            raise ValueError("Gumbel fit needs at least 2 replicates")
        return self

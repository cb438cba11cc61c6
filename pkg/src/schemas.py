from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from helper import is_known_scheme


class KernelTermRecord(BaseModel):
    """One sinusoidal kernel term as exported to JSON"""
    omega: float = Field(gt=0)
    amplitude: float = Field(ge=0)
    phase: float


class TensorSidecar(BaseModel):
    """JSON sidecar describing a flat little-endian float32 dump"""
    model_config = ConfigDict(populate_by_name=True)

    shape: list[int]
    dim_order: Optional[list[str]] = Field(default=None, alias="dimOrder")
    pair_layout: Literal["interleaved"] = Field(default="interleaved", alias="pairLayout")
    dtype: Literal["float32"] = "float32"

    @field_validator("shape")
    @classmethod
    def _positive_shape(cls, v: list[int]) -> list[int]:
        if not v or any(n <= 0 for n in v):
            raise ValueError(f"shape must be a non-empty list of positive extents, got {v}")
        return v

    @model_validator(mode="after")
    def _dim_order_matches(self):
        if self.dim_order is not None and len(self.dim_order) != len(self.shape):
            raise ValueError("dim_order must name every axis of shape")
        return self


class RegionBox(BaseModel):
    """HR bounding box in LR index space, half-open [start, stop) per axis"""
    model_config = ConfigDict(extra="forbid")

    start: list[int]
    stop: list[int]


class LayoutFile(BaseModel):
    """Mixed-resolution layout description"""
    model_config = ConfigDict(extra="forbid")

    axes: list[int]
    ratio: int = Field(ge=1)
    regions: list[RegionBox] = Field(default_factory=list)

    @model_validator(mode="after")
    def _regions_fit(self):
        if not self.axes or any(n <= 0 for n in self.axes):
            raise ValueError(f"axes must be positive LR extents, got {self.axes}")
        for i, box in enumerate(self.regions):
            if len(box.start) != len(self.axes) or len(box.stop) != len(self.axes):
                raise ValueError(f"region {i} does not have {len(self.axes)} coordinates")
            for a, (lo, hi, n) in enumerate(zip(box.start, box.stop, self.axes)):
                if not 0 <= lo < hi <= n:
                    raise ValueError(f"region {i} axis {a}: need 0 <= start < stop <= {n}")
        return self


class ScheduleConfigModel(BaseModel):
    """Coarse -> mixed -> fine step split plus the sigma schedule"""
    model_config = ConfigDict(extra="forbid")

    total_steps: int = Field(ge=1)
    coarse_steps: int = Field(ge=0)
    mixed_steps: int = Field(ge=0)
    fine_steps: int = Field(default=0, ge=0)
    hr_token_ratio: float = Field(gt=0, le=1)
    sigmas: Optional[list[float]] = None

    @model_validator(mode="after")
    def _steps_and_sigmas(self):
        if self.coarse_steps + self.mixed_steps + self.fine_steps != self.total_steps:
            raise ValueError(
                f"coarse_steps + mixed_steps + fine_steps must equal total_steps ({self.total_steps})"
            )
        if self.sigmas is not None:
            if len(self.sigmas) != self.total_steps + 1:
                raise ValueError(f"sigmas must have total_steps + 1 = {self.total_steps + 1} entries")
            if any(not 0 <= s <= 1 for s in self.sigmas):
                raise ValueError("sigmas must lie in [0, 1]")
            if any(b > a for a, b in zip(self.sigmas, self.sigmas[1:])):
                raise ValueError("sigmas must be monotone non-increasing")
        return self


class CliConfig(BaseModel):
    """Validated flag set of one CLI invocation"""
    model_config = ConfigDict(extra="forbid")

    command: str
    config: Optional[str] = None
    seed: Optional[int] = None
    out: Optional[str] = None
    verbose: bool = False

    dim: Optional[int] = None
    base: Optional[float] = None
    ntk_s: Optional[float] = None
    yarn_s: Optional[float] = None
    yarn_length: Optional[float] = None
    yarn_alpha: Optional[float] = None
    yarn_beta: Optional[float] = None
    yarn_temperature: Optional[float] = None

    synthetic: bool = False
    rope_only: bool = False
    q: Optional[str] = None
    k: Optional[str] = None
    weights: Optional[str] = None
    key_weights: Optional[str] = None
    projection: Optional[Literal["query", "key"]] = None
    delta_min: Optional[int] = None
    delta_max: Optional[int] = None
    pairs: Optional[int] = Field(default=None, ge=1)
    num_heads: Optional[int] = Field(default=None, ge=1)
    sharpness: Optional[float] = Field(default=None, ge=0)
    axis: str = "w"
    threshold: Optional[float] = Field(default=None, ge=0, le=1)
    top_n: Optional[int] = Field(default=None, ge=1)

    scheme: Optional[str] = None
    schemes: Optional[list[str]] = None
    ratio: Optional[float] = Field(default=None, gt=0, le=1)
    ratios: Optional[list[float]] = None
    coarse_steps: Optional[int] = Field(default=None, ge=0)
    mixed_steps: Optional[int] = Field(default=None, ge=0)
    fine_steps: Optional[int] = Field(default=None, ge=0)
    n_pad_lr: Optional[int] = Field(default=None, ge=0)
    n_pad_hr: Optional[int] = Field(default=None, ge=0)
    no_boundary: bool = False
    timings: bool = False
    pool: Optional[Literal["mean", "stride0"]] = None
    grid: Optional[int] = Field(default=None, ge=2)
    layout: Optional[str] = None
    schedule: Optional[str] = None

    @field_validator("scheme")
    @classmethod
    def _known_scheme(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and not is_known_scheme(v):
            raise ValueError(f"unknown scheme {v!r}")
        return v

    @field_validator("schemes")
    @classmethod
    def _known_schemes(cls, v: Optional[list[str]]) -> Optional[list[str]]:
        if v is not None:
            if not v:
                raise ValueError("schemes must not be empty")
            bad = [s for s in v if not is_known_scheme(s)]
            if bad:
                raise ValueError(f"unknown schemes {bad}")
        return v

    @field_validator("ratios")
    @classmethod
    def _ratios_in_range(cls, v: Optional[list[float]]) -> Optional[list[float]]:
        if v is not None and any(not 0 < r <= 1 for r in v):
            raise ValueError("every hr token ratio must lie in (0, 1]")
        return v

"""
Position remapping schemes applied before rotation.

Piecewise-affine unification (fractional / integerized), NTK frequency rescaling,
YaRN ramped rescaling with a logit temperature, and CRPA query-scale re-indexing.
Maps are evaluated on demand; stored token positions always stay native.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Literal, Optional, Sequence

import numpy as np

from errors import DomainError
from helper import SCHEMES
from rope_core import AxisGroup, FrequencySchedule, make_frequencies

logger = logging.getLogger(__name__)

MapMode = Literal["fractional", "integerized"]

CONTINUITY_TOL = 1e-9


@dataclass(frozen=True)
class RegionSpec:
    """
    One affine piece phi(p) = offset + scale * (p - start_index), valid for
    start_index <= p < stop_index in original (token sequence) index space.
    """

    region_id: int
    start_index: float
    stop_index: float
    scale: float
    offset: float
    native_stride: float

    def __post_init__(self):
        if self.scale <= 0:
            raise DomainError(f"region {self.region_id}: scale must be positive")
        if self.native_stride <= 0:
            raise DomainError(f"region {self.region_id}: native_stride must be positive")
        if self.stop_index <= self.start_index:
            raise DomainError(f"region {self.region_id}: empty index range")

    def apply(self, p):
        return self.offset + self.scale * (np.asarray(p, dtype=np.float64) - self.start_index)

    @property
    def mapped_end(self) -> float:
        return self.offset + self.scale * (self.stop_index - self.start_index)


class PiecewiseMap:
    """Callable piecewise-affine position map over ordered, non-overlapping regions"""

    def __init__(self, regions: Sequence[RegionSpec]):
        self.regions = tuple(regions)
        self._starts = np.array([r.start_index for r in self.regions], dtype=np.float64)

    def __call__(self, p):
        pos = np.asarray(p, dtype=np.float64)
        lo, hi = self.regions[0].start_index, self.regions[-1].stop_index
        if np.any(pos < lo) or np.any(pos > hi):
            raise DomainError(f"position outside mapped range [{lo}, {hi}]")
        idx = np.clip(np.searchsorted(self._starts, pos, side="right") - 1, 0, len(self.regions) - 1)
        offsets = np.array([r.offset for r in self.regions])[idx]
        scales = np.array([r.scale for r in self.regions])[idx]
        out = offsets + scales * (pos - self._starts[idx])
        return float(out) if out.ndim == 0 else out


def build_piecewise_map(regions: Sequence[RegionSpec], mode: MapMode) -> PiecewiseMap:
    if mode not in ("fractional", "integerized"):
        raise DomainError(f"unknown map mode {mode!r}")
    if not regions:
        raise DomainError("at least one region is required")
    ordered = list(regions)
    for prev, nxt in zip(ordered, ordered[1:]):
        if nxt.start_index < prev.stop_index:
            raise DomainError(f"regions {prev.region_id} and {nxt.region_id} overlap or are unordered")
        if abs(prev.mapped_end - nxt.offset) > CONTINUITY_TOL:
            raise DomainError(
                f"map not continuous between regions {prev.region_id} and {nxt.region_id}: "
                f"{prev.mapped_end} != {nxt.offset}"
            )
    if mode == "integerized":
        for r in ordered:
            if not (_is_integral(r.scale) and _is_integral(r.offset)):
                raise DomainError(
                    f"region {r.region_id} does not land on integer indices (scale {r.scale}, offset {r.offset})"
                )
    return PiecewiseMap(ordered)


def _is_integral(x: float) -> bool:
    return abs(x - round(x)) <= CONTINUITY_TOL


def unify_regions(segments: Sequence[tuple[int, float]], mode: MapMode) -> list[RegionSpec]:
    """
    Build continuous RegionSpecs for consecutive token runs given as (count, native_stride).

    Fractional mode measures every run in units of the coarsest stride, so finer runs get
    fractional indices. Integerized mode measures in units of the finest stride, stretching
    coarse runs so every index is an integer.
    """
    if not segments:
        raise DomainError("at least one segment is required")
    strides = [float(s) for _, s in segments]
    if any(s <= 0 for s in strides):
        raise DomainError("native strides must be positive")
    ref = max(strides) if mode == "fractional" else min(strides)
    specs = []
    start, offset = 0.0, 0.0
    for rid, (count, stride) in enumerate(segments):
        spec = RegionSpec(
            region_id=rid,
            start_index=start,
            stop_index=start + count,
            scale=float(stride) / ref,
            offset=offset,
            native_stride=float(stride),
        )
        specs.append(spec)
        start, offset = spec.stop_index, spec.mapped_end
    return specs


def toy_segments(ratio: int = 2) -> list[tuple[int, float]]:
    """Nine LR tokens with LR cells 3 and 4 upsampled by `ratio`: 3 LR, 2*ratio HR, 4 LR."""
    return [(3, float(ratio)), (2 * ratio, 1.0), (4, float(ratio))]


# ---- CRPA ----


@dataclass(frozen=True)
class StrideRatio:
    """Physical inter-token spacing of the query and key regions"""

    query_stride: float
    key_stride: float

    def __post_init__(self):
        if self.query_stride <= 0 or self.key_stride <= 0:
            raise DomainError("strides must be positive")

    @property
    def ratio(self) -> float:
        return self.key_stride / self.query_stride


def crpa_remap(p_k, sr: StrideRatio):
    """Express a key's native index in query-stride units: (S_k / S_q) * p_k."""
    out = sr.ratio * np.asarray(p_k, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


# ---- NTK ----


@dataclass(frozen=True)
class NtkParams:
    extension_factor: float

    def __post_init__(self):
        if self.extension_factor <= 0:
            raise DomainError(f"NTK extension factor must be positive, got {self.extension_factor}")

    def lam(self, dim: int) -> float:
        if dim == 2:
            raise DomainError("NTK exponent undefined for d=2")
        return self.extension_factor ** (dim / (dim - 2))


def ntk_rescale(fs: FrequencySchedule, p: NtkParams) -> FrequencySchedule:
    """Replace the base by lambda * base with lambda = s^(d/(d-2))."""
    lam = p.lam(fs.dim)
    logger.debug(f"NTK rescale dim={fs.dim} s={p.extension_factor} lambda={lam}")
    return make_frequencies(fs.dim, lam * fs.base)


# ---- YaRN ----


@dataclass(frozen=True)
class YarnParams:
    train_length: float
    extension_factor: float
    alpha: float = 1.0
    beta: float = 32.0
    temperature: float = 1.0

    def __post_init__(self):
        errors = []
        if self.train_length <= 0:
            errors.append("train_length must be positive")
        if self.extension_factor <= 0:
            errors.append("extension_factor must be positive")
        if not self.alpha < self.beta:
            errors.append(f"alpha ({self.alpha}) must be < beta ({self.beta})")
        if self.temperature <= 0:
            errors.append("temperature must be positive")
        if errors:
            raise DomainError("invalid YaRN parameters: " + "; ".join(errors))


def yarn_ramp(r, alpha: float, beta: float):
    """gamma(r): 0 below alpha, 1 above beta, linear in between."""
    gamma = np.clip((np.asarray(r, dtype=np.float64) - alpha) / (beta - alpha), 0.0, 1.0)
    return float(gamma) if gamma.ndim == 0 else gamma


def yarn_rescale(fs: FrequencySchedule, p: YarnParams) -> FrequencySchedule:
    omega = fs.omega
    r = p.train_length * omega / (2.0 * math.pi)
    gamma = yarn_ramp(r, p.alpha, p.beta)
    scaled = gamma * omega + (1.0 - gamma) * omega / p.extension_factor
    return replace(fs, freqs=tuple(float(w) for w in scaled))


def yarn_temperature(scores, p: YarnParams) -> np.ndarray:
    """Divide every pre-softmax logit by tau."""
    return np.asarray(scores, dtype=np.float64) / p.temperature


# ---- scheme dispatch ----


@dataclass(frozen=True)
class SchemeParams:
    """Constants the non-CRPA baselines need besides the layout"""

    ntk_extension: Optional[float] = None  # pure NTK; None -> layout ratio
    pi_ntk_linear_scale: float = 1.5
    pi_ntk_extension: float = 1.333
    yarn_train_length: float = 32.0
    yarn_extension: Optional[float] = None  # None -> layout ratio
    yarn_alpha: float = 1.0
    yarn_beta: float = 32.0
    yarn_temperature: float = 1.0

    def yarn(self, ratio: float) -> YarnParams:
        return YarnParams(
            train_length=self.yarn_train_length,
            extension_factor=self.yarn_extension or float(ratio),
            alpha=self.yarn_alpha,
            beta=self.yarn_beta,
            temperature=self.yarn_temperature,
        )


def scheme_groups(
    scheme: str, groups: Sequence[AxisGroup], ratio: float, params: SchemeParams
) -> tuple[AxisGroup, ...]:
    """Per-axis frequency schedules the scheme rotates with."""
    if scheme not in SCHEMES:
        raise DomainError(f"unknown scheme {scheme!r}")
    kind = SCHEMES[scheme][1]
    if kind == "plain":
        return tuple(groups)
    out = []
    for g in groups:
        if kind == "ntk":
            fs = ntk_rescale(g.schedule, NtkParams(params.ntk_extension or float(ratio)))
        elif kind == "pi-ntk":
            fs = ntk_rescale(g.schedule, NtkParams(params.pi_ntk_extension))
        else:
            fs = yarn_rescale(g.schedule, params.yarn(ratio))
        out.append(replace(g, schedule=fs))
    return tuple(out)


def scheme_temperature(scheme: str, params: SchemeParams) -> float:
    return params.yarn_temperature if scheme == "yarn" else 1.0


def shared_positions(scheme: str, fine_positions: np.ndarray, ratio: float, params: SchemeParams) -> np.ndarray:
    """
    Query-independent positions of the piecewise schemes, from physical positions given
    in finest-stride units. PI-LR measures on the LR grid, the HR-grid schemes keep fine
    units, PI+NTK divides the fine grid by its linear scale.
    """
    kind = SCHEMES.get(scheme, ("",))[0]
    if kind == "fractional":
        return fine_positions / float(ratio)
    if kind == "scaled":
        return fine_positions / params.pi_ntk_linear_scale
    if kind == "integerized":
        return fine_positions.astype(np.float64, copy=True)
    raise DomainError(f"scheme {scheme!r} has no shared position map")

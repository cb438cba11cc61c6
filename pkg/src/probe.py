"""
Head probing: kappa(delta) curves, RoPE-dominance score and curve export.

kappa(delta) = E[<q_hat, R(delta) k_hat>] over sampled (q, k) pairs. With per-pair
coefficients A_i, B_i of the normalized vectors this is
sum_i mean(A_i) cos(omega_i delta) + mean(B_i) sin(omega_i delta).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

import numpy as np
import pandas as pd

from errors import DomainError, IngestionError
from helper import write_csv
from phase_kernel import pair_coefficients
from rope_core import FrequencySchedule

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.085
CURVE_COLUMNS = ["axis", "delta", "kappa", "n", "timestep"]


@dataclass(frozen=True)
class PairSample:
    q: np.ndarray
    k: np.ndarray
    tags: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class DeltaCurve:
    axis: str
    deltas: tuple[float, ...]
    means: tuple[float, ...]
    sample_count: int
    timestep: Optional[int] = None

    def __post_init__(self):
        if len(self.deltas) != len(self.means):
            raise DomainError("deltas and means must have equal length")
        if self.sample_count < 1:
            raise DomainError("sample_count must be >= 1")

    def value_at(self, delta: float) -> float:
        return self.means[self.deltas.index(delta)]


@dataclass(frozen=True)
class HeadStats:
    rds: float
    is_rope_dominant: bool


def delta_grid(delta_min: int = -64, delta_max: int = 64) -> np.ndarray:
    if delta_max < delta_min:
        raise DomainError(f"empty delta range [{delta_min}, {delta_max}]")
    return np.arange(delta_min, delta_max + 1, dtype=np.float64)


def _normalized(samples: Sequence[PairSample], dim: int) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise DomainError("at least one sample is required")
    q = np.stack([np.asarray(s.q, dtype=np.float64) for s in samples])
    k = np.stack([np.asarray(s.k, dtype=np.float64) for s in samples])
    if q.shape[1] != dim or k.shape[1] != dim:
        raise DomainError(f"sample vectors must have length {dim}")
    for name, m in (("q", q), ("k", k)):
        norms = np.linalg.norm(m, axis=1)
        zero = np.flatnonzero(norms == 0)
        if len(zero):
            raise DomainError(f"sample {int(zero[0])} has a zero-norm {name} vector")
        if not np.all(np.isfinite(m)):
            raise DomainError(f"sample vectors contain non-finite {name} entries")
    return (
        q / np.linalg.norm(q, axis=1, keepdims=True),
        k / np.linalg.norm(k, axis=1, keepdims=True),
    )


def _curve_from_coefficients(a: np.ndarray, b: np.ndarray, fs: FrequencySchedule, deltas) -> np.ndarray:
    theta = np.asarray(deltas, dtype=np.float64)[:, None] * fs.omega
    return np.cos(theta) @ a + np.sin(theta) @ b


def kappa_curve(
    samples: Sequence[PairSample],
    fs: FrequencySchedule,
    deltas,
    axis: str = "w",
    timestep: Optional[int] = None,
) -> DeltaCurve:
    q, k = _normalized(samples, fs.dim)
    a, b = pair_coefficients(q.T, k.T)
    means = _curve_from_coefficients(a.mean(axis=1), b.mean(axis=1), fs, deltas)
    logger.debug(f"kappa curve over {len(samples)} samples, {len(means)} offsets")
    return DeltaCurve(
        axis=axis,
        deltas=tuple(float(d) for d in deltas),
        means=tuple(float(m) for m in means),
        sample_count=len(samples),
        timestep=timestep,
    )


def rope_only_curve(fs: FrequencySchedule, deltas, axis: str = "w") -> DeltaCurve:
    """Content-free baseline: q = k = normalized all-ones, giving (2/d) sum_i cos(omega_i delta)."""
    ones = np.ones(fs.dim)
    return kappa_curve([PairSample(ones, ones)], fs, deltas, axis=axis)


def rds_score(weight_rows, threshold: float = DEFAULT_THRESHOLD) -> HeadStats:
    """(2/d) sum_i |cos(row 2i, row 2i+1)| over a [dim x model_dim] projection."""
    w = np.asarray(weight_rows, dtype=np.float64)
    if w.ndim != 2:
        raise DomainError(f"weight rows must be a matrix, got shape {w.shape}")
    if w.shape[0] % 2:
        raise DomainError(f"dimension must be even, got {w.shape[0]} rows")
    norms = np.linalg.norm(w, axis=1)
    zero = np.flatnonzero(norms == 0)
    if len(zero):
        raise DomainError(f"weight row {int(zero[0])} is zero")
    even, odd = w[0::2], w[1::2]
    cos = np.einsum("ij,ij->i", even, odd) / (norms[0::2] * norms[1::2])
    rds = float(np.clip(np.mean(np.abs(cos)), 0.0, 1.0))
    return HeadStats(rds=rds, is_rope_dominant=rds > threshold)


@dataclass(frozen=True)
class HeadProbe:
    """Samples and projection rows of one head"""

    samples: tuple[PairSample, ...]
    weight_rows: np.ndarray = field(compare=False)


def mean_curve(curves: Sequence[DeltaCurve], axis: Optional[str] = None) -> DeltaCurve:
    if not curves:
        raise DomainError("no curves to average")
    deltas = curves[0].deltas
    if any(c.deltas != deltas for c in curves):
        raise DomainError("curves must share one delta grid")
    means = np.mean([c.means for c in curves], axis=0)
    return DeltaCurve(
        axis=axis or curves[0].axis,
        deltas=deltas,
        means=tuple(float(m) for m in means),
        sample_count=sum(c.sample_count for c in curves),
        timestep=curves[0].timestep,
    )


def kappa_by_dominance(
    heads: Sequence[HeadProbe],
    fs: FrequencySchedule,
    deltas,
    threshold: float = DEFAULT_THRESHOLD,
    axis: str = "w",
) -> dict[str, DeltaCurve]:
    """Mean per-head curve over all heads, and over RoPE-dominant heads when any exist."""
    per_head = []
    dominant = []
    for h in heads:
        curve = kappa_curve(h.samples, fs, deltas, axis=axis)
        per_head.append(curve)
        if rds_score(h.weight_rows, threshold).is_rope_dominant:
            dominant.append(curve)
    out = {"all": mean_curve(per_head)}
    if dominant:
        out["dominant"] = mean_curve(dominant)
    logger.info(f"{len(dominant)}/{len(per_head)} heads are RoPE-dominant at threshold {threshold}")
    return out


def half_width(curve: DeltaCurve) -> float:
    """Smallest positive offset where kappa has dropped to half its value at delta 0."""
    peak = curve.value_at(0.0)
    for d, m in sorted(zip(curve.deltas, curve.means)):
        if d > 0 and m <= peak / 2:
            return d
    return math.inf


def samples_from_dumps(q: np.ndarray, k: np.ndarray) -> list[PairSample]:
    """Pair rows of two [n x dim] dumps."""
    if q.ndim != 2 or q.shape != k.shape:
        raise IngestionError(f"q and k dumps must be matching [n x dim] matrices, got {q.shape} and {k.shape}")
    return [PairSample(q[i], k[i], {"row": i}) for i in range(q.shape[0])]


# ---- CSV ----


def curves_frame(curves: Sequence[DeltaCurve]) -> pd.DataFrame:
    rows = [
        {"axis": c.axis, "delta": d, "kappa": m, "n": c.sample_count, "timestep": c.timestep}
        for c in curves
        for d, m in zip(c.deltas, c.means)
    ]
    frame = pd.DataFrame(rows, columns=CURVE_COLUMNS)
    if frame.empty:
        return frame
    frame["timestep"] = frame["timestep"].astype("Int64")
    return frame.sort_values(["axis", "delta", "timestep"], kind="mergesort", na_position="first").reset_index(drop=True)


def export_curves(curves: Sequence[DeltaCurve], out: str | IO, provenance: Optional[str] = None) -> None:
    write_csv(curves_frame(curves), out, provenance)


def import_curves(path: str) -> list[DeltaCurve]:
    try:
        frame = pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError) as e:
        raise IngestionError(f"cannot read curves from {path}: {e}") from e
    missing = set(CURVE_COLUMNS) - set(frame.columns)
    if missing:
        raise IngestionError(f"curves CSV {path} lacks columns {sorted(missing)}")
    curves = []
    frame["timestep"] = frame["timestep"].astype("Int64")
    for (axis, timestep), part in frame.groupby(["axis", "timestep"], dropna=False, sort=True):
        part = part.sort_values("delta", kind="mergesort")
        curves.append(
            DeltaCurve(
                axis=str(axis),
                deltas=tuple(float(d) for d in part["delta"]),
                means=tuple(float(m) for m in part["kappa"]),
                sample_count=int(part["n"].iloc[0]),
                timestep=None if pd.isna(timestep) else int(timestep),
            )
        )
    return curves

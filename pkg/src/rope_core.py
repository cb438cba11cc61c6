"""
Rotary positional embeddings (RoPE) in double precision.

Channel pairs are interleaved: pair i is (vec[2i], vec[2i+1]) and is rotated by
theta_i = omega_i * p. Positions are reals everywhere.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from errors import DomainError

logger = logging.getLogger(__name__)

DEFAULT_BASE = 10000.0


@dataclass(frozen=True)
class FrequencySchedule:
    """Angular frequencies omega_i for one axis of head dimension `dim`"""

    dim: int
    base: float
    freqs: tuple[float, ...]

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise DomainError(f"dimension must be even and >= 2, got {self.dim}")
        if len(self.freqs) != self.dim // 2:
            raise DomainError(
                f"expected {self.dim // 2} frequencies for dim {self.dim}, got {len(self.freqs)}"
            )
        if any(not np.isfinite(w) or w <= 0 for w in self.freqs):
            raise DomainError("frequencies must be finite and positive")

    @property
    def omega(self) -> np.ndarray:
        return np.asarray(self.freqs, dtype=np.float64)

    @property
    def num_pairs(self) -> int:
        return self.dim // 2


def make_frequencies(dim: int, base: float = DEFAULT_BASE) -> FrequencySchedule:
    """Geometric schedule omega_i = base^(-2i/dim)."""
    if dim % 2:
        raise DomainError(f"dimension must be even, got {dim}")
    if dim < 2:
        raise DomainError(f"dimension must be >= 2, got {dim}")
    if not base > 1:
        raise DomainError(f"base must be > 1, got {base}")
    exponents = -2.0 * np.arange(dim // 2, dtype=np.float64) / dim
    freqs = np.power(float(base), exponents)
    return FrequencySchedule(dim=dim, base=float(base), freqs=tuple(float(w) for w in freqs))


def _check_length(vec: np.ndarray, dim: int, name: str = "vector") -> None:
    if vec.shape[-1] != dim:
        raise DomainError(f"{name} length {vec.shape[-1]} does not match dim {dim}")


def rotate(vec, p, fs: FrequencySchedule) -> np.ndarray:
    """
    Rotate every (2i, 2i+1) pair of `vec` by omega_i * p.

    `vec` may be a single vector (dim,) or a stack (..., dim); `p` is a scalar or an
    array broadcastable to the leading shape of `vec`.
    """
    v = np.asarray(vec, dtype=np.float64)
    _check_length(v, fs.dim)
    pos = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(pos)):
        raise DomainError("positions must be finite")
    theta = pos[..., None] * fs.omega
    cos, sin = np.cos(theta), np.sin(theta)
    x0 = v[..., 0::2]
    x1 = v[..., 1::2]
    out = np.empty(np.broadcast_shapes(v.shape, theta.shape[:-1] + (fs.dim,)), dtype=np.float64)
    out[..., 0::2] = x0 * cos - x1 * sin
    out[..., 1::2] = x0 * sin + x1 * cos
    return out


def score_absolute(q, k, p_q: float, p_k: float, fs: FrequencySchedule) -> float:
    """<R(p_q) q, R(p_k) k>"""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    _check_length(q, fs.dim, "q")
    _check_length(k, fs.dim, "k")
    return float(np.dot(rotate(q, p_q, fs), rotate(k, p_k, fs)))


def score_relative(q, k, delta: float, fs: FrequencySchedule) -> float:
    """q^T R(delta) k, the score as a function of the offset delta = p_k - p_q only."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    _check_length(q, fs.dim, "q")
    _check_length(k, fs.dim, "k")
    return float(np.dot(q, rotate(k, delta, fs)))


# ---- multi-axis ----


@dataclass(frozen=True)
class AxisGroup:
    """Contiguous channel slice [start, stop) rotated by one axis' schedule"""

    start: int
    stop: int
    schedule: FrequencySchedule


@dataclass(frozen=True)
class MultiAxisPosition:
    """Per-axis coordinates (t, h, w) or (h, w) with their channel-group assignment"""

    coords: tuple[float, ...]
    groups: tuple[AxisGroup, ...]

    def __post_init__(self):
        if len(self.coords) != len(self.groups):
            raise DomainError(
                f"{len(self.coords)} coordinates given for {len(self.groups)} channel groups"
            )
        validate_groups(self.groups)

    @property
    def dim(self) -> int:
        return max(g.stop for g in self.groups)


def validate_groups(groups: Sequence[AxisGroup]) -> int:
    """Check that groups are disjoint, exhaustive and pair-aligned; return the total dim."""
    if not groups:
        raise DomainError("at least one channel group is required")
    errors = []
    ordered = sorted(groups, key=lambda g: g.start)
    cursor = 0
    for g in ordered:
        if g.start < cursor:
            errors.append(f"channel groups overlap at channel {g.start}")
        elif g.start > cursor:
            errors.append(f"channels {cursor}..{g.start} are not assigned to any axis")
        if g.start % 2:
            errors.append(f"group starting at {g.start} splits a rotary pair")
        if g.stop - g.start != g.schedule.dim:
            errors.append(
                f"group [{g.start}, {g.stop}) width does not match schedule dim {g.schedule.dim}"
            )
        cursor = max(cursor, g.stop)
    if errors:
        raise DomainError("invalid channel groups: " + "; ".join(errors))
    return cursor


def split_groups(dim: int, num_axes: int, base: float = DEFAULT_BASE) -> tuple[AxisGroup, ...]:
    """
    Split `dim` channels into `num_axes` contiguous even-width groups, each with its own
    geometric schedule. The first axis absorbs any remainder.
    """
    if dim % 2:
        raise DomainError(f"dimension must be even, got {dim}")
    if num_axes < 1 or 2 * num_axes > dim:
        raise DomainError(f"cannot split dim {dim} into {num_axes} axes")
    width = (dim // (2 * num_axes)) * 2
    widths = [width] * num_axes
    widths[0] += dim - width * num_axes
    groups = []
    start = 0
    for w in widths:
        groups.append(AxisGroup(start=start, stop=start + w, schedule=make_frequencies(w, base)))
        start += w
    return tuple(groups)


def rotate_multiaxis(vec, pos: MultiAxisPosition) -> np.ndarray:
    """Rotate each channel group independently by its own axis coordinate."""
    v = np.asarray(vec, dtype=np.float64)
    _check_length(v, pos.dim)
    out = np.empty_like(v)
    for coord, g in zip(pos.coords, pos.groups):
        out[..., g.start:g.stop] = rotate(v[..., g.start:g.stop], coord, g.schedule)
    return out


def as_groups(groups) -> tuple[AxisGroup, ...]:
    """Accept a single FrequencySchedule as a one-axis group set."""
    if isinstance(groups, FrequencySchedule):
        return (AxisGroup(start=0, stop=groups.dim, schedule=groups),)
    return tuple(groups)


def rotate_positions(vecs, positions, groups: Sequence[AxisGroup]) -> np.ndarray:
    """Rotate token rows vecs[n, dim] by per-token coordinates positions[n, num_axes]."""
    v = np.asarray(vecs, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim == 1:
        pos = pos[:, None]
    if pos.shape[1] != len(groups):
        raise DomainError(f"{pos.shape[1]} coordinate axes given for {len(groups)} channel groups")
    _check_length(v, validate_groups(groups))
    out = np.empty_like(v)
    for a, g in enumerate(groups):
        out[:, g.start:g.stop] = rotate(v[:, g.start:g.stop], pos[:, a], g.schedule)
    return out


def score_relative_multiaxis(q, k, deltas: Sequence[float], groups: Sequence[AxisGroup]) -> float:
    """Sum of per-axis relative scores over disjoint channel groups."""
    dim = validate_groups(groups)
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    _check_length(q, dim, "q")
    _check_length(k, dim, "k")
    if len(deltas) != len(groups):
        raise DomainError(f"{len(deltas)} offsets given for {len(groups)} axes")
    return float(
        sum(
            score_relative(q[g.start:g.stop], k[g.start:g.stop], d, g.schedule)
            for d, g in zip(deltas, groups)
        )
    )

"""
Boundary Expand-and-Replace.

Each region is dilated into its neighbour by a band of tokens. After every mixed
step the HR tokens in the band are overwritten by the upsampled LR clean estimate and
the LR tokens in the band by the downsampled HR clean estimate, both re-noised to the
next noise level. Schedule index t grows as noise decreases, so "next" is t + 1.
"""

import logging
from dataclasses import dataclass, replace
from typing import Literal, Optional, Protocol, Sequence

import numpy as np

from errors import DomainError

logger = logging.getLogger(__name__)

DEFAULT_N_PAD = 2


def dilate_mask(mask: np.ndarray, n_pad: int) -> np.ndarray:
    """Chebyshev dilation by `n_pad` cells along every axis, clipped at the edges."""
    if n_pad < 0:
        raise DomainError(f"n_pad must be >= 0, got {n_pad}")
    out = np.asarray(mask, dtype=bool).copy()
    for axis in range(out.ndim):
        src = out.copy()
        n = src.shape[axis]
        for s in range(1, min(n_pad, n - 1) + 1):
            lo = [slice(None)] * out.ndim
            hi = [slice(None)] * out.ndim
            lo[axis], hi[axis] = slice(0, n - s), slice(s, n)
            out[tuple(lo)] |= src[tuple(hi)]
            out[tuple(hi)] |= src[tuple(lo)]
    return out


def _spatial(x: np.ndarray, num_spatial: Optional[int]) -> int:
    return x.ndim if num_spatial is None else num_spatial


def resize_latent(
    x: np.ndarray, factor: int, direction: Literal["up", "down"], num_spatial: Optional[int] = None
) -> np.ndarray:
    """
    Nearest-neighbour replication (up) or mean pooling (down) by an integer factor over
    the first `num_spatial` axes (all axes when None).
    """
    x = np.asarray(x, dtype=np.float64)
    if int(factor) != factor or factor < 1:
        raise DomainError(f"resize factor must be a positive integer, got {factor}")
    ns = _spatial(x, num_spatial)
    if factor == 1:
        return x.copy()
    if direction == "up":
        out = x
        for axis in range(ns):
            out = np.repeat(out, factor, axis=axis)
        return out
    if direction == "down":
        shape = []
        for axis in range(ns):
            if x.shape[axis] % factor:
                raise DomainError(f"extent {x.shape[axis]} on axis {axis} is not divisible by {factor}")
            shape.extend([x.shape[axis] // factor, factor])
        shape.extend(x.shape[ns:])
        return x.reshape(shape).mean(axis=tuple(range(1, 2 * ns, 2)))
    raise DomainError(f"unknown resize direction {direction!r}")


class Resizer(Protocol):
    def up(self, x: np.ndarray, factor: int, num_spatial: Optional[int] = None) -> np.ndarray: ...

    def down(self, x: np.ndarray, factor: int, num_spatial: Optional[int] = None) -> np.ndarray: ...


class FixedResizer:
    """Nearest-up / mean-down; a learned resizer can be swapped in behind the same interface"""

    def up(self, x, factor, num_spatial=None):
        return resize_latent(x, factor, "up", num_spatial)

    def down(self, x, factor, num_spatial=None):
        return resize_latent(x, factor, "down", num_spatial)


# ---- noise schedule ----


def linear_sigmas(num_steps: int, shift: float = 1.0) -> tuple[float, ...]:
    """
    num_steps + 1 levels from 1 to 0, optionally shifted:
    sigma' = shift * sigma / (1 + (shift - 1) * sigma).
    """
    if num_steps < 1:
        raise DomainError(f"num_steps must be >= 1, got {num_steps}")
    if shift <= 0:
        raise DomainError(f"shift must be positive, got {shift}")
    sigma = np.linspace(1.0, 0.0, num_steps + 1)
    shifted = shift * sigma / (1.0 + (shift - 1.0) * sigma)
    return tuple(float(s) for s in shifted)


@dataclass(frozen=True)
class NoiseSchedule:
    sigmas: tuple[float, ...]

    def __post_init__(self):
        if not self.sigmas:
            raise DomainError("noise schedule is empty")
        if any(not 0.0 <= s <= 1.0 for s in self.sigmas):
            raise DomainError("sigmas must lie in [0, 1]")
        if any(b > a for a, b in zip(self.sigmas, self.sigmas[1:])):
            raise DomainError("sigmas must be monotone non-increasing")

    @classmethod
    def linear(cls, num_steps: int, shift: float = 1.0) -> "NoiseSchedule":
        return cls(linear_sigmas(num_steps, shift))

    def sigma(self, t: int) -> float:
        if not 0 <= t < len(self.sigmas):
            raise DomainError(f"timestep {t} out of range [0, {len(self.sigmas) - 1}]")
        return self.sigmas[t]


def renoise(x0: np.ndarray, t: int, schedule: NoiseSchedule, seed: int | Sequence[int]) -> np.ndarray:
    """(1 - sigma_t) x0 + sigma_t eps, eps ~ N(0, 1) from a generator seeded by (seed, t)."""
    sigma = schedule.sigma(t)
    x0 = np.asarray(x0, dtype=np.float64)
    seq = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    eps = np.random.default_rng(seq + [int(t)]).standard_normal(x0.shape)
    return (1.0 - sigma) * x0 + sigma * eps


# ---- bands ----


@dataclass(frozen=True)
class BoundaryBand:
    """
    lr_band_mask: LR-grid cells inside HR territory within n_pad_lr of the LR region.
    hr_band_mask: fine-grid cells inside LR territory within n_pad_hr of the HR region,
    rounded up to whole LR cells.
    """

    n_pad_lr: int
    n_pad_hr: int
    ratio: int
    lr_band_mask: np.ndarray
    hr_band_mask: np.ndarray

    @classmethod
    def build(
        cls, lr_mask: np.ndarray, hr_mask: np.ndarray, n_pad_lr: int = DEFAULT_N_PAD,
        n_pad_hr: int = DEFAULT_N_PAD, ratio: int = 2,
    ) -> "BoundaryBand":
        """`lr_mask` marks LR territory on the LR grid, `hr_mask` HR territory on the fine grid."""
        if n_pad_lr < 0 or n_pad_hr < 0:
            raise DomainError("n_pad must be >= 0")
        lr_mask = np.asarray(lr_mask, dtype=bool)
        hr_mask = np.asarray(hr_mask, dtype=bool)
        expected = tuple(n * ratio for n in lr_mask.shape)
        if hr_mask.shape != expected:
            raise DomainError(f"HR mask shape {hr_mask.shape} does not match LR grid x{ratio} = {expected}")
        lr_band = dilate_mask(lr_mask, n_pad_lr) & ~lr_mask
        grown = dilate_mask(hr_mask, n_pad_hr) & ~hr_mask
        cells = resize_latent(grown.astype(np.float64), ratio, "down") > 0
        hr_band = resize_latent(cells.astype(np.float64), ratio, "up") > 0
        hr_band &= ~hr_mask
        return cls(n_pad_lr, n_pad_hr, ratio, lr_band, hr_band)

    @property
    def is_empty(self) -> bool:
        return not self.lr_band_mask.any() and not self.hr_band_mask.any()


@dataclass(frozen=True)
class LatentState:
    x_t: np.ndarray
    x0_hat: np.ndarray
    t: int
    sigma: float


def expand_and_replace(
    state_lr: LatentState,
    state_hr: LatentState,
    band: BoundaryBand,
    schedule: NoiseSchedule,
    seed: int | Sequence[int] = 0,
    resizer: Optional[Resizer] = None,
) -> tuple[LatentState, LatentState]:
    """
    Exchange clean estimates across the seam. HR band tokens take renoise(up(x0_LR), t+1),
    LR band tokens take renoise(down(x0_HR), t+1); nothing outside the bands changes.
    Grids are channel-last with the band masks' rank as spatial rank.
    """
    if state_lr.t != state_hr.t:
        raise DomainError(f"timestep mismatch: LR at {state_lr.t}, HR at {state_hr.t}")
    if band.is_empty:
        return state_lr, state_hr
    resizer = resizer or FixedResizer()
    t_next = state_lr.t + 1
    ns = band.lr_band_mask.ndim
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]

    x_hr = state_hr.x_t.copy()
    if band.hr_band_mask.any():
        up = renoise(resizer.up(state_lr.x0_hat, band.ratio, ns), t_next, schedule, base + [1])
        x_hr[band.hr_band_mask] = up[band.hr_band_mask]
    x_lr = state_lr.x_t.copy()
    if band.lr_band_mask.any():
        down = renoise(resizer.down(state_hr.x0_hat, band.ratio, ns), t_next, schedule, base + [0])
        x_lr[band.lr_band_mask] = down[band.lr_band_mask]
    logger.debug(
        f"expand-and-replace at t={state_lr.t}: {int(band.hr_band_mask.sum())} HR / "
        f"{int(band.lr_band_mask.sum())} LR band tokens"
    )
    return replace(state_lr, x_t=x_lr), replace(state_hr, x_t=x_hr)

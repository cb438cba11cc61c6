"""
Toy coarse -> mixed -> fine denoising pipeline over synthetic RoPE heads.

A step attends the current latent with every synthetic head (values = latent), blends
the result with a per-resolution pull term into a clean estimate
x0 = (1 - pull) * attend(x) + pull * G, and moves x <- x + eta * (x0 - x). G is
calibrated on the full uniform grid of each resolution so the target latent is the exact
fixed point there; any position error the scheme introduces shows up as a deviation from
the full-HR reference run.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from boundary import (
    DEFAULT_N_PAD,
    BoundaryBand,
    LatentState,
    NoiseSchedule,
    expand_and_replace,
    renoise,
    resize_latent,
)
from errors import DomainError, IngestionError
from mixed_attention import RegionLayout, TokenGrid, attend_mixed, attend_reference, phase_consistency_error, upsample_mask
from position_maps import SchemeParams
from probe import PairSample
from rope_core import DEFAULT_BASE, AxisGroup, rotate, split_groups
from schemas import LayoutFile
from schemas import ScheduleConfigModel as ScheduleConfig

logger = logging.getLogger(__name__)

DEFAULT_ETA = 0.2
DEFAULT_TARGET_PULL = 0.5
COVERAGE_TOL = 0.05
REPORT_COLUMNS = ["scheme", "rms_global", "rms_hr", "phase_err", "seconds"]
SWEEP_COLUMNS = ["scheme", "ratio", "rms_global", "rms_hr", "phase_err"]

# independent noise streams per seed
_INIT_LR, _INIT_HR, _UPSAMPLE, _BOUNDARY, _TARGET = 0, 1, 2, 3, 4


# ---- synthetic heads ----


@dataclass(frozen=True)
class SyntheticHead:
    """
    Position-only head: q and k are fixed vectors whose per-pair coefficients put
    amplitude C_i with phase phi_i on pair i of every axis group.
    """

    q: np.ndarray
    k: np.ndarray
    focus: int
    amplitudes: tuple[np.ndarray, ...]
    phases: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class SyntheticModel:
    heads: tuple[SyntheticHead, ...]
    groups: tuple[AxisGroup, ...]
    sharpness: float
    seed: int
    eta: float = DEFAULT_ETA
    target_pull: float = DEFAULT_TARGET_PULL

    @property
    def dim(self) -> int:
        return self.groups[-1].stop

    def clean_estimate(self, attended: np.ndarray, pull: np.ndarray) -> np.ndarray:
        return (1.0 - self.target_pull) * attended + self.target_pull * pull

    def step(self, x: np.ndarray, x0: np.ndarray) -> np.ndarray:
        return x + self.eta * (x0 - x)

    def sample_pairs(self, num_pairs: int, seed: int, axis: int = 0) -> list[PairSample]:
        """
        (q, k) pairs of one axis group, each from a random head rotated by a common random
        position; the common rotation leaves the pair's kernel unchanged.
        """
        if num_pairs < 1:
            raise DomainError(f"num_pairs must be >= 1, got {num_pairs}")
        g = self.groups[axis]
        rng = np.random.default_rng(seed)
        which = rng.integers(0, len(self.heads), size=num_pairs)
        p = rng.uniform(-1000.0, 1000.0, size=num_pairs)
        q = np.stack([h.q[g.start:g.stop] for h in self.heads])[which]
        k = np.stack([h.k[g.start:g.stop] for h in self.heads])[which]
        q = rotate(q, p, g.schedule)
        k = rotate(k, p, g.schedule)
        return [PairSample(q[i], k[i], {"head": int(which[i])}) for i in range(num_pairs)]


def _profile(num_pairs: int, focus: int, sharpness: float, rng: np.random.Generator) -> np.ndarray:
    idx = np.arange(num_pairs)
    if sharpness == 0:
        return (idx == focus).astype(np.float64)
    # energy spreads from the focus into lower frequencies; side lobes of the
    # focus frequency cancel and the peak at delta 0 stays alone
    prof = np.where(idx >= focus, np.exp(-(idx - focus) / sharpness), 0.0)
    jitter = 1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=num_pairs)
    return prof * np.where(idx == focus, 1.0, jitter)


def build_synthetic_model(
    num_heads: int,
    dim: int,
    sharpness: float,
    seed: int,
    num_axes: int = 1,
    base: float = DEFAULT_BASE,
    focus: int = 0,
    focus_step: int = 0,
    gain: float = 1.0,
    eta: float = DEFAULT_ETA,
    target_pull: float = DEFAULT_TARGET_PULL,
) -> SyntheticModel:
    """
    Deterministic bank of position-only heads. Head h concentrates on pair
    focus + h * focus_step of every axis (clipped to the group); per axis the amplitudes
    sum to gain * sqrt(dim), so the peak logit of one axis is `gain`.
    """
    if num_heads < 1:
        raise DomainError(f"num_heads must be >= 1, got {num_heads}")
    if sharpness < 0:
        raise DomainError(f"sharpness must be >= 0, got {sharpness}")
    if gain <= 0:
        raise DomainError(f"gain must be positive, got {gain}")
    if not 0 < eta <= 1 or not 0 < target_pull <= 1:
        raise DomainError("eta and target_pull must lie in (0, 1]")
    groups = split_groups(dim, num_axes, base)
    rng = np.random.default_rng(seed)
    heads = []
    for h in range(num_heads):
        q_parts, k_parts, amps, phases = [], [], [], []
        for g in groups:
            n = g.schedule.num_pairs
            f = min(focus + h * focus_step, n - 1)
            c = _profile(n, f, sharpness, rng)
            c = c / c.sum() * gain * math.sqrt(dim)
            k_axis = np.zeros(g.stop - g.start)
            k_axis[0::2] = np.sqrt(c)
            q_axis = k_axis.copy()
            p = rng.uniform(-1000.0, 1000.0)
            q_parts.append(rotate(q_axis, p, g.schedule))
            k_parts.append(rotate(k_axis, p, g.schedule))
            amps.append(c)
            phases.append(np.zeros(n))
        heads.append(
            SyntheticHead(
                q=np.concatenate(q_parts),
                k=np.concatenate(k_parts),
                focus=min(focus + h * focus_step, groups[0].schedule.num_pairs - 1),
                amplitudes=tuple(amps),
                phases=tuple(phases),
            )
        )
    logger.debug(f"built {num_heads} synthetic heads, dim={dim}, axes={num_axes}, sharpness={sharpness}")
    return SyntheticModel(tuple(heads), groups, sharpness, seed, eta, target_pull)


def monotone_focus(groups: Sequence[AxisGroup], extent: int) -> int:
    """Smallest pair index whose phase stays within [-pi, pi] over `extent` fine tokens."""
    omega = groups[0].schedule.omega
    ok = np.flatnonzero(omega * max(extent - 1, 1) <= math.pi)
    return int(ok[0]) if len(ok) else len(omega) - 1


def sim_model_for_grid(
    grid: int,
    ratio: int = 2,
    num_heads: int = 2,
    head_dim: int = 32,
    kernel_width: float = 1.0,
    base: float = DEFAULT_BASE,
    seed: int = 0,
    eta: float = DEFAULT_ETA,
    target_pull: float = DEFAULT_TARGET_PULL,
) -> SyntheticModel:
    """
    Two-axis bank sized to a grid: the first head focuses on the fastest frequency that
    does not wrap across the fine grid, with gain set so its kernel is locally Gaussian
    of width `kernel_width` tokens; further heads step to slower frequencies.
    """
    groups = split_groups(head_dim, 2, base)
    focus = monotone_focus(groups, grid * ratio)
    omega = float(groups[0].schedule.omega[focus])
    gain = 1.0 / (omega * omega * kernel_width * kernel_width)
    return build_synthetic_model(
        num_heads, head_dim, 0.0, seed, num_axes=2, base=base, focus=focus, focus_step=1,
        gain=gain, eta=eta, target_pull=target_pull,
    )


# ---- targets ----


def _gaussian_blur(field_: np.ndarray, sigma: float, axes: Sequence[int]) -> np.ndarray:
    if sigma <= 0:
        return field_
    radius = max(1, int(math.ceil(3 * sigma)))
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    out = field_
    for axis in axes:
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        n = out.shape[axis]
        out = sum(w * np.take(padded, np.arange(j, j + n), axis=axis) for j, w in enumerate(taps))
    return out


@dataclass(frozen=True)
class SimTarget:
    """Target latents of both resolutions (channel-last) and their calibrated pull terms"""

    hr: np.ndarray
    lr: np.ndarray
    pull_hr: np.ndarray
    pull_lr: np.ndarray
    ratio: int

    @property
    def lr_shape(self) -> tuple[int, ...]:
        return self.lr.shape[:-1]

    @property
    def fine_shape(self) -> tuple[int, ...]:
        return self.hr.shape[:-1]


def _uniform_attention(model: SyntheticModel, x: np.ndarray) -> np.ndarray:
    shape, channels = x.shape[:-1], x.shape[-1]
    grid = TokenGrid(tuple(shape))
    tokens = x.reshape(-1, channels)
    n = len(tokens)
    out = np.zeros_like(tokens)
    for head in model.heads:
        q = np.broadcast_to(head.q, (n, model.dim))
        k = np.broadcast_to(head.k, (n, model.dim))
        out += attend_reference(grid, q, k, tokens, model.groups).values
    return (out / len(model.heads)).reshape(x.shape)


def _calibrate_pull(model: SyntheticModel, target: np.ndarray) -> np.ndarray:
    attended = _uniform_attention(model, target)
    return (target - (1.0 - model.target_pull) * attended) / model.target_pull


def make_target(
    model: SyntheticModel, grid: int, ratio: int = 2, channels: int = 4, seed: int = 0, smoothing: float = 1.0
) -> SimTarget:
    """Seeded band-limited noise (unit std per channel) plus a sharp-edged square, on a grid x grid LR image."""
    if len(model.groups) != 2:
        raise DomainError("the simulator works on two-axis models")
    fine = (grid * ratio, grid * ratio)
    rng = np.random.default_rng([seed, _TARGET])
    hr = _gaussian_blur(rng.standard_normal(fine + (channels,)), smoothing, axes=(0, 1))
    hr = hr / hr.std(axis=(0, 1), keepdims=True)
    n = fine[0]
    lo, hi = n // 4, (5 * n) // 8
    hr[lo:hi, lo:hi, :] += 1.5 * (-1.0) ** np.arange(channels)
    lr = resize_latent(hr, ratio, "down", num_spatial=2)
    return SimTarget(hr, lr, _calibrate_pull(model, hr), _calibrate_pull(model, lr), ratio)


# ---- layouts ----


def center_box_mask(lr_shape: Sequence[int], hr_token_ratio: float) -> np.ndarray:
    """Centered rectangle of LR cells covering about `hr_token_ratio` of the grid, as square as tolerance allows."""
    if len(lr_shape) != 2:
        raise DomainError("center box needs a two-axis grid")
    rows, cols = (int(n) for n in lr_shape)
    want = hr_token_ratio * rows * cols
    candidates = []
    for h in range(1, rows + 1):
        w = int(np.clip(round(want / h), 1, cols))
        candidates.append((abs(h * w - want) / want, h, w))
    close = [c for c in candidates if c[0] <= COVERAGE_TOL / 2]
    if close:
        _, h, w = min(close, key=lambda c: (abs(c[1] - c[2]), c[0]))
    else:
        _, h, w = min(candidates)
    mask = np.zeros((rows, cols), dtype=bool)
    r0, c0 = (rows - h) // 2, (cols - w) // 2
    mask[r0:r0 + h, c0:c0 + w] = True
    return mask


def resolve_hr_cells(
    layout_source: Optional[LayoutFile | np.ndarray], lr_shape: Sequence[int], ratio: int, hr_token_ratio: float
) -> np.ndarray:
    lr_shape = tuple(lr_shape)
    if layout_source is None:
        cells = center_box_mask(lr_shape, hr_token_ratio)
    elif isinstance(layout_source, LayoutFile):
        if tuple(layout_source.axes) != lr_shape or layout_source.ratio != ratio:
            raise DomainError(
                f"layout grid {tuple(layout_source.axes)} x{layout_source.ratio} does not match "
                f"simulation grid {lr_shape} x{ratio}"
            )
        cells = ~RegionLayout.from_layout_file(layout_source).lr_cells
    else:
        cells = np.asarray(layout_source, dtype=bool)
        if cells.shape != lr_shape:
            raise DomainError(f"HR cell mask shape {cells.shape} does not match grid {lr_shape}")
    coverage = float(cells.mean())
    if abs(coverage - hr_token_ratio) > COVERAGE_TOL * hr_token_ratio:
        raise DomainError(
            f"mask coverage {coverage:.4f} differs from hr_token_ratio {hr_token_ratio} by more than "
            f"{COVERAGE_TOL:.0%}"
        )
    return cells


def load_layout(path: str) -> LayoutFile:
    try:
        return LayoutFile.model_validate(json.loads(Path(path).read_text()))
    except FileNotFoundError as e:
        raise IngestionError(f"layout file not found at {path}") from e
    except json.JSONDecodeError as e:
        raise IngestionError(f"layout file {path} is not valid JSON: {e}") from e
    except ValidationError as e:
        raise IngestionError(f"invalid layout file {path}: {e}") from e


def load_schedule(path: str) -> ScheduleConfig:
    try:
        return ScheduleConfig.model_validate(json.loads(Path(path).read_text()))
    except FileNotFoundError as e:
        raise IngestionError(f"schedule file not found at {path}") from e
    except json.JSONDecodeError as e:
        raise IngestionError(f"schedule file {path} is not valid JSON: {e}") from e
    except ValidationError as e:
        raise IngestionError(f"invalid schedule file {path}: {e}") from e


# ---- schedule ----


@dataclass(frozen=True)
class SimSettings:
    n_pad_lr: int = DEFAULT_N_PAD
    n_pad_hr: int = DEFAULT_N_PAD
    boundary: bool = True
    pool: str = "mean"
    params: SchemeParams = field(default_factory=SchemeParams)
    sigma_shift: float = 1.0


@dataclass(frozen=True)
class RunReport:
    scheme: str
    hr_token_ratio: float
    rms_global: float
    rms_hr: float
    phase_err: float
    stage_steps: dict[str, int]
    stage_seconds: dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.rms_global < 0 or self.rms_hr < 0:
            raise DomainError("deviations must be non-negative")

    @property
    def seconds(self) -> float:
        return float(sum(self.stage_seconds.values()))

    def row(self, timings: bool = False) -> dict:
        return {
            "scheme": self.scheme,
            "ratio": self.hr_token_ratio,
            "rms_global": self.rms_global,
            "rms_hr": self.rms_hr,
            "phase_err": self.phase_err,
            "seconds": round(self.seconds, 3) if timings else None,
        }


def noise_schedule(cfg: ScheduleConfig, shift: float = 1.0) -> NoiseSchedule:
    if cfg.sigmas is not None:
        return NoiseSchedule(tuple(float(s) for s in cfg.sigmas))
    return NoiseSchedule.linear(cfg.total_steps, shift)


def _noise(seed: int, stream: int, shape) -> np.ndarray:
    return np.random.default_rng([seed, stream]).standard_normal(shape)


def _mixed_attention(
    model: SyntheticModel, layout: RegionLayout, tokens: np.ndarray, scheme: str, settings: SimSettings
) -> np.ndarray:
    n = len(tokens)
    out = np.zeros_like(tokens)
    for head in model.heads:
        q = np.broadcast_to(head.q, (n, model.dim))
        k = np.broadcast_to(head.k, (n, model.dim))
        out += attend_mixed(layout, q, k, tokens, scheme, model.groups, settings.params, settings.pool).values
    return out / len(model.heads)


def _uniform_step(model: SyntheticModel, x: np.ndarray, pull: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x0 = model.clean_estimate(_uniform_attention(model, x), pull)
    return model.step(x, x0), x0


def _simulate(
    model: SyntheticModel,
    target: SimTarget,
    cfg: ScheduleConfig,
    scheme: str,
    hr_cells: np.ndarray,
    settings: SimSettings,
    seed: int,
) -> tuple[np.ndarray, dict[str, float]]:
    """Run the three stages; returns the composed fine-grid latent and per-stage seconds."""
    sched = noise_schedule(cfg, settings.sigma_shift)
    r = target.ratio
    ns = len(target.lr_shape)
    lr_x = _noise(seed, _INIT_LR, target.lr.shape)
    hr_x = _noise(seed, _INIT_HR, target.hr.shape)
    lr_x0 = np.zeros_like(lr_x)
    hr_x0 = np.zeros_like(hr_x)
    hr_terr = upsample_mask(hr_cells, r)
    lr_ran = False
    t = 0
    seconds: dict[str, float] = {}

    def lift(cells: np.ndarray) -> None:
        # re-noise the upsampled LR estimate to the current level where HR tokens start
        if lr_ran and cells.any():
            up = renoise(resize_latent(lr_x0, r, "up", ns), t, sched, [seed, _UPSAMPLE])
            hr_x[cells] = up[cells]

    start = time.perf_counter()
    for _ in range(cfg.coarse_steps):
        lr_x, lr_x0 = _uniform_step(model, lr_x, target.pull_lr)
        t += 1
    lr_ran = cfg.coarse_steps > 0
    seconds["coarse"] = time.perf_counter() - start
    logger.info(f"{scheme}: coarse stage done ({cfg.coarse_steps} steps)")

    start = time.perf_counter()
    if cfg.mixed_steps:
        lr_terr = ~hr_cells
        if settings.boundary:
            band = BoundaryBand.build(lr_terr, hr_terr, settings.n_pad_lr, settings.n_pad_hr, r)
        else:
            band = BoundaryBand.build(lr_terr, hr_terr, 0, 0, r)
        hr_active = hr_terr | band.hr_band_mask
        layout = RegionLayout(target.lr_shape, r, lr_terr | band.lr_band_mask, hr_active)
        lift(hr_active)
        pull = layout.gather(target.pull_lr, target.pull_hr)
        for _ in range(cfg.mixed_steps):
            tokens = layout.gather(lr_x, hr_x)
            x0 = model.clean_estimate(_mixed_attention(model, layout, tokens, scheme, settings), pull)
            layout.scatter(model.step(tokens, x0), lr_x, hr_x)
            layout.scatter(x0, lr_x0, hr_x0)
            if not band.is_empty:
                sigma = sched.sigma(t)
                s_lr, s_hr = expand_and_replace(
                    LatentState(lr_x, lr_x0, t, sigma),
                    LatentState(hr_x, hr_x0, t, sigma),
                    band,
                    sched,
                    seed=[seed, _BOUNDARY],
                )
                lr_x, hr_x = s_lr.x_t, s_hr.x_t
            t += 1
        lr_ran = True
    seconds["mixed"] = time.perf_counter() - start
    logger.info(f"{scheme}: mixed stage done ({cfg.mixed_steps} steps)")

    start = time.perf_counter()
    if cfg.fine_steps:
        lift(~hr_terr if cfg.mixed_steps else np.ones(target.fine_shape, dtype=bool))
        for _ in range(cfg.fine_steps):
            hr_x, hr_x0 = _uniform_step(model, hr_x, target.pull_hr)
            t += 1
    seconds["fine"] = time.perf_counter() - start
    logger.info(f"{scheme}: fine stage done ({cfg.fine_steps} steps)")

    if cfg.fine_steps:
        return hr_x, seconds
    up = resize_latent(lr_x, r, "up", ns)
    if cfg.mixed_steps:
        return np.where(hr_terr[..., None], hr_x, up), seconds
    return up, seconds


def simulate_latent(
    model: SyntheticModel,
    target: SimTarget,
    cfg: ScheduleConfig,
    scheme: str,
    layout_source: Optional[LayoutFile | np.ndarray] = None,
    settings: Optional[SimSettings] = None,
    seed: int = 0,
) -> np.ndarray:
    """Composed fine-grid latent of one run, without the comparison against a reference."""
    hr_cells = resolve_hr_cells(layout_source, target.lr_shape, target.ratio, cfg.hr_token_ratio)
    out, _ = _simulate(model, target, cfg, scheme, hr_cells, settings or SimSettings(), seed)
    return out


def reference_config(cfg: ScheduleConfig) -> ScheduleConfig:
    """Same step budget and sigmas, every step on the full fine grid."""
    return cfg.model_copy(update={"coarse_steps": 0, "mixed_steps": 0, "fine_steps": cfg.total_steps})


def reference_latent(
    model: SyntheticModel, target: SimTarget, cfg: ScheduleConfig, settings: Optional[SimSettings] = None, seed: int = 0
) -> np.ndarray:
    settings = settings or SimSettings()
    empty = np.zeros(target.lr_shape, dtype=bool)
    out, _ = _simulate(model, target, reference_config(cfg), "reference", empty, settings, seed)
    return out


def run_schedule(
    model: SyntheticModel,
    target: SimTarget,
    cfg: ScheduleConfig,
    scheme: str,
    layout_source: Optional[LayoutFile | np.ndarray] = None,
    settings: Optional[SimSettings] = None,
    seed: int = 0,
    reference: Optional[np.ndarray] = None,
) -> RunReport:
    """One scheme against the full-HR reference run with the same seed and step budget."""
    settings = settings or SimSettings()
    hr_cells = resolve_hr_cells(layout_source, target.lr_shape, target.ratio, cfg.hr_token_ratio)
    if reference is None:
        reference = reference_latent(model, target, cfg, settings, seed)
    out, seconds = _simulate(model, target, cfg, scheme, hr_cells, settings, seed)
    diff = out - reference
    hr_terr = upsample_mask(hr_cells, target.ratio)
    territory = RegionLayout.from_hr_cells(target.lr_shape, target.ratio, hr_cells)
    report = RunReport(
        scheme=scheme,
        hr_token_ratio=cfg.hr_token_ratio,
        rms_global=float(np.sqrt(np.mean(diff ** 2))),
        rms_hr=float(np.sqrt(np.mean(diff[hr_terr] ** 2))) if hr_terr.any() else 0.0,
        phase_err=phase_consistency_error(territory, scheme, settings.params),
        stage_steps={"coarse": cfg.coarse_steps, "mixed": cfg.mixed_steps, "fine": cfg.fine_steps},
        stage_seconds=seconds,
    )
    logger.info(f"{scheme}: rms_global={report.rms_global:.6f} rms_hr={report.rms_hr:.6f}")
    return report


def compare_schemes(
    model: SyntheticModel,
    target: SimTarget,
    cfg: ScheduleConfig,
    schemes: Sequence[str],
    layout_source: Optional[LayoutFile | np.ndarray] = None,
    settings: Optional[SimSettings] = None,
    seed: int = 0,
) -> list[RunReport]:
    if not schemes:
        raise DomainError("no schemes to compare")
    settings = settings or SimSettings()
    reference = reference_latent(model, target, cfg, settings, seed)
    return [run_schedule(model, target, cfg, s, layout_source, settings, seed, reference) for s in schemes]


def ratio_sweep(
    model: SyntheticModel,
    target: SimTarget,
    cfg: ScheduleConfig,
    ratios: Sequence[float],
    scheme: str = "crpa",
    settings: Optional[SimSettings] = None,
    seed: int = 0,
) -> list[RunReport]:
    """One scheme over several HR token ratios, each with a centered box."""
    settings = settings or SimSettings()
    reference = reference_latent(model, target, cfg, settings, seed)
    reports = []
    for ratio in ratios:
        cfg_r = ScheduleConfig.model_validate({**cfg.model_dump(), "hr_token_ratio": ratio})
        reports.append(run_schedule(model, target, cfg_r, scheme, None, settings, seed, reference))
    return reports


def reports_frame(reports: Sequence[RunReport], timings: bool = False) -> pd.DataFrame:
    return pd.DataFrame([r.row(timings) for r in reports], columns=REPORT_COLUMNS)


def sweep_frame(reports: Sequence[RunReport]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in reports], columns=SWEEP_COLUMNS)

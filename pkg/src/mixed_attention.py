"""
Dense RoPE attention over mixed LR/HR token sets.

Physical positions are measured in finest-stride units: an HR token's physical
coordinate is its native fine index, an LR token sits at `ratio * cell` (anchored at
the first fine sub-cell of its cell). Every scheme derives the positions it feeds into
the rotation from these, on demand, per attention call.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from errors import DomainError
from helper import is_crpa
from position_maps import (
    SchemeParams,
    StrideRatio,
    crpa_remap,
    scheme_groups,
    scheme_temperature,
    shared_positions,
)
from rope_core import AxisGroup, as_groups, rotate_positions
from schemas import LayoutFile

logger = logging.getLogger(__name__)

ROW_CHUNK = 1024


def _grid_coords(mask: np.ndarray) -> np.ndarray:
    """Row-major coordinates of the true cells of a boolean grid, shape [n, ndim]."""
    return np.argwhere(mask)


class RegionLayout:
    """
    LR tokens live on the cells of `lr_cells` (LR grid), HR tokens on the cells of
    `hr_fine` (fine grid = LR grid * ratio per axis). Physical coverage may overlap
    (boundary bands); every token still belongs to exactly one region.
    """

    def __init__(self, lr_shape: Sequence[int], ratio: int, lr_cells: np.ndarray, hr_fine: np.ndarray):
        if int(ratio) != ratio or ratio < 1:
            raise DomainError(f"upsample ratio must be a positive integer, got {ratio}")
        self.lr_shape = tuple(int(n) for n in lr_shape)
        self.ratio = int(ratio)
        self.fine_shape = tuple(n * self.ratio for n in self.lr_shape)
        self.lr_cells = np.asarray(lr_cells, dtype=bool)
        self.hr_fine = np.asarray(hr_fine, dtype=bool)
        if self.lr_cells.shape != self.lr_shape:
            raise DomainError(f"LR mask shape {self.lr_cells.shape} != LR grid {self.lr_shape}")
        if self.hr_fine.shape != self.fine_shape:
            raise DomainError(f"HR mask shape {self.hr_fine.shape} != fine grid {self.fine_shape}")
        if not self.lr_cells.any() and not self.hr_fine.any():
            raise DomainError("layout has no tokens")
        self._build_tokens()

    # ---- constructors ----

    @classmethod
    def from_hr_cells(cls, lr_shape: Sequence[int], ratio: int, hr_cells: np.ndarray) -> "RegionLayout":
        """Partition layout: HR where `hr_cells` is set, LR elsewhere."""
        hr_cells = np.asarray(hr_cells, dtype=bool)
        hr_fine = upsample_mask(hr_cells, ratio)
        return cls(lr_shape, ratio, ~hr_cells, hr_fine)

    @classmethod
    def from_boxes(cls, axes: Sequence[int], ratio: int, boxes: Sequence[tuple[Sequence[int], Sequence[int]]]) -> "RegionLayout":
        hr_cells = np.zeros(tuple(axes), dtype=bool)
        for start, stop in boxes:
            hr_cells[tuple(slice(a, b) for a, b in zip(start, stop))] = True
        return cls.from_hr_cells(axes, ratio, hr_cells)

    @classmethod
    def from_layout_file(cls, layout: LayoutFile) -> "RegionLayout":
        return cls.from_boxes(layout.axes, layout.ratio, [(r.start, r.stop) for r in layout.regions])

    @classmethod
    def from_fine_mask(cls, lr_shape: Sequence[int], ratio: int, hr_fine: np.ndarray) -> "RegionLayout":
        """Partition layout from an HR mask on the fine grid; it must cover whole LR cells."""
        hr_fine = np.asarray(hr_fine, dtype=bool)
        covered = pool_mask_count(hr_fine, ratio)
        full = ratio ** hr_fine.ndim
        if np.any((covered > 0) & (covered < full)):
            raise DomainError("HR region not alignable to LR grid")
        return cls(lr_shape, ratio, covered == 0, hr_fine)

    @classmethod
    def uniform(cls, shape: Sequence[int]) -> "RegionLayout":
        """Single LR region at ratio 1."""
        shape = tuple(shape)
        return cls(shape, 1, np.ones(shape, dtype=bool), np.zeros(shape, dtype=bool))

    # ---- token table ----

    def _build_tokens(self) -> None:
        lr = _grid_coords(self.lr_cells)
        hr = _grid_coords(self.hr_fine)
        physical = np.concatenate([lr * self.ratio, hr]).astype(np.float64)
        native = np.concatenate([lr, hr]).astype(np.float64)
        is_hr = np.concatenate([np.zeros(len(lr), dtype=bool), np.ones(len(hr), dtype=bool)])
        keys = [is_hr] + [physical[:, a] for a in reversed(range(self.ndim))]
        order = np.lexsort(keys)
        self.physical = physical[order].reshape(-1, self.ndim)
        self.native = native[order].reshape(-1, self.ndim)
        self.is_hr = is_hr[order]
        self.stride = np.where(self.is_hr, 1.0, float(self.ratio))
        self.cell = (self.physical // self.ratio).astype(np.int64)
        self.lr_ids = np.flatnonzero(~self.is_hr)
        self.hr_ids = np.flatnonzero(self.is_hr)
        self._lr_index = tuple(self.native[self.lr_ids].astype(np.int64).T)
        self._hr_index = tuple(self.native[self.hr_ids].astype(np.int64).T)

    @property
    def ndim(self) -> int:
        return len(self.lr_shape)

    @property
    def num_tokens(self) -> int:
        return len(self.is_hr)

    @property
    def is_single_stride(self) -> bool:
        return len(self.lr_ids) == 0 or len(self.hr_ids) == 0

    def gather(self, lr_grid: np.ndarray, hr_grid: np.ndarray) -> np.ndarray:
        """Token rows from channel-last LR and fine grids."""
        channels = lr_grid.shape[self.ndim:]
        out = np.empty((self.num_tokens,) + channels, dtype=np.float64)
        out[self.lr_ids] = lr_grid[self._lr_index]
        out[self.hr_ids] = hr_grid[self._hr_index]
        return out

    def scatter(self, tokens: np.ndarray, lr_grid: np.ndarray, hr_grid: np.ndarray) -> None:
        """Write token rows back into the channel-last grids in place."""
        lr_grid[self._lr_index] = tokens[self.lr_ids]
        hr_grid[self._hr_index] = tokens[self.hr_ids]

    def hr_groups(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Group HR tokens by LR cell. Returns (cells [g, ndim], member token ids [g, ratio^ndim]),
        members ordered row-major inside the cell.
        """
        full = self.ratio ** self.ndim
        if len(self.hr_ids) == 0:
            return np.zeros((0, self.ndim), dtype=np.int64), np.zeros((0, full), dtype=np.int64)
        cells = self.cell[self.hr_ids]
        flat = np.ravel_multi_index(tuple(cells.T), self.lr_shape)
        order = np.lexsort(
            [self.physical[self.hr_ids, a] for a in reversed(range(self.ndim))] + [flat]
        )
        flat_sorted = flat[order]
        uniq, counts = np.unique(flat_sorted, return_counts=True)
        if np.any(counts != full):
            raise DomainError("HR region not alignable to LR grid")
        members = self.hr_ids[order].reshape(len(uniq), full)
        return np.stack(np.unravel_index(uniq, self.lr_shape), axis=1), members


def upsample_mask(mask: np.ndarray, ratio: int) -> np.ndarray:
    out = np.asarray(mask, dtype=bool)
    for axis in range(out.ndim):
        out = np.repeat(out, ratio, axis=axis)
    return out


def pool_mask_count(mask: np.ndarray, ratio: int) -> np.ndarray:
    """Number of true fine cells inside each LR cell."""
    m = np.asarray(mask, dtype=np.int64)
    for n in m.shape:
        if n % ratio:
            raise DomainError("HR region not alignable to LR grid")
    shape = []
    for n in m.shape:
        shape.extend([n // ratio, ratio])
    return m.reshape(shape).sum(axis=tuple(range(1, 2 * m.ndim, 2)))


@dataclass(frozen=True)
class TokenGrid:
    """Uniform single-resolution grid; positions are row-major native indices"""

    shape: tuple[int, ...]
    stride: float = 1.0

    @property
    def num_tokens(self) -> int:
        return int(np.prod(self.shape))

    @property
    def positions(self) -> np.ndarray:
        return np.indices(self.shape).reshape(len(self.shape), -1).T.astype(np.float64)


@dataclass
class AttentionOutput:
    values: np.ndarray
    weights: Optional[dict[str, np.ndarray]] = None
    logits: Optional[dict[str, np.ndarray]] = None
    key_positions: Optional[dict[str, np.ndarray]] = None
    query_ids: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class _QueryBlock:
    name: str
    query_ids: np.ndarray
    q_pos: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    k_pos: np.ndarray
    query_stride: float


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=-1, keepdims=True)


def _dense_attention(qr, kr, v, temperature: float, keep: bool):
    scale = 1.0 / (math.sqrt(qr.shape[-1]) * temperature)
    out = np.empty((qr.shape[0],) + v.shape[1:], dtype=np.float64)
    all_w, all_l = [], []
    for lo in range(0, qr.shape[0], ROW_CHUNK):
        logits = (qr[lo:lo + ROW_CHUNK] @ kr.T) * scale
        w = softmax_rows(logits)
        out[lo:lo + ROW_CHUNK] = w @ v
        if keep:
            all_w.append(w)
            all_l.append(logits)
    if keep:
        return out, np.concatenate(all_w), np.concatenate(all_l)
    return out, None, None


def _query_classes(layout: RegionLayout) -> list[tuple[str, np.ndarray, float]]:
    classes = []
    if len(layout.lr_ids):
        classes.append(("lr", layout.lr_ids, float(layout.ratio)))
    if len(layout.hr_ids):
        classes.append(("hr", layout.hr_ids, 1.0))
    return classes


def crpa_key_positions(layout: RegionLayout, query_stride: float) -> np.ndarray:
    """Native key indices of every token re-indexed onto the query's stride."""
    out = np.empty_like(layout.native)
    for stride in np.unique(layout.stride):
        sel = layout.stride == stride
        out[sel] = crpa_remap(layout.native[sel], StrideRatio(query_stride, float(stride)))
    return out


def pool_hr_keys(layout: RegionLayout, k: np.ndarray, v: np.ndarray, pool: str):
    """One key/value per HR cell for LR queries, positioned on the LR grid. Returns (k, v, positions, cells)."""
    cells, members = layout.hr_groups()
    if pool == "mean":
        k_pool = k[members].mean(axis=1)
        v_pool = v[members].mean(axis=1)
        centroid = layout.native[members].mean(axis=1)
    elif pool == "stride0":
        k_pool = k[members[:, 0]]
        v_pool = v[members[:, 0]]
        centroid = layout.native[members[:, 0]] + (layout.ratio - 1) / 2.0
    else:
        raise DomainError(f"unknown pool mode {pool!r}")
    sr = StrideRatio(float(layout.ratio), 1.0)
    # LR tokens are anchored at their first fine sub-cell; remove the half-cell offset
    pos = crpa_remap(centroid, sr) - (layout.ratio - 1) / (2.0 * layout.ratio)
    return k_pool, v_pool, pos.reshape(-1, layout.ndim), cells


def _blocks(layout: RegionLayout, k, v, scheme: str, params: SchemeParams, pool: str) -> list[_QueryBlock]:
    blocks = []
    if not is_crpa(scheme):
        pos = shared_positions(scheme, layout.physical, layout.ratio, params)
        for name, ids, stride in _query_classes(layout):
            blocks.append(_QueryBlock(name, ids, pos[ids], k, v, pos, stride))
        return blocks
    for name, ids, stride in _query_classes(layout):
        q_pos = layout.native[ids]
        if name == "hr" or layout.ratio == 1:
            k_pos = crpa_key_positions(layout, stride)
            blocks.append(_QueryBlock(name, ids, q_pos, k, v, k_pos, stride))
            continue
        lr = layout.lr_ids
        k_pool, v_pool, pos_pool, _ = pool_hr_keys(layout, k, v, pool)
        blocks.append(
            _QueryBlock(
                name,
                ids,
                q_pos,
                np.concatenate([k[lr], k_pool]),
                np.concatenate([v[lr], v_pool]),
                np.concatenate([layout.native[lr], pos_pool]),
                stride,
            )
        )
    return blocks


def attend_mixed(
    layout: RegionLayout,
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    scheme: str,
    groups,
    params: Optional[SchemeParams] = None,
    pool: str = "mean",
    keep_scores: bool = False,
) -> AttentionOutput:
    """
    One attention call over a mixed layout. Every query region assembles its own K/V
    set and positions under `scheme`, then runs softmax(QK^T / sqrt(d)) V.
    """
    params = params or SchemeParams()
    groups = as_groups(groups)
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = layout.num_tokens
    if q.shape[0] != n or k.shape[0] != n or v.shape[0] != n:
        raise DomainError(f"q/k/v must have {n} rows, got {q.shape[0]}/{k.shape[0]}/{v.shape[0]}")
    if len(groups) != layout.ndim:
        raise DomainError(f"{len(groups)} axis groups for a {layout.ndim}-axis layout")

    rot_groups = scheme_groups(scheme, groups, layout.ratio, params)
    temperature = scheme_temperature(scheme, params)
    out = np.empty((n,) + v.shape[1:], dtype=np.float64)
    result = AttentionOutput(values=out)
    if keep_scores:
        result.weights, result.logits, result.key_positions = {}, {}, {}
    for block in _blocks(layout, k, v, scheme, params, pool):
        qr = rotate_positions(q[block.query_ids], block.q_pos, rot_groups)
        kr = rotate_positions(block.keys, block.k_pos, rot_groups)
        values, w, logits = _dense_attention(qr, kr, block.values, temperature, keep_scores)
        out[block.query_ids] = values
        result.query_ids[block.name] = block.query_ids
        if keep_scores:
            result.weights[block.name] = w
            result.logits[block.name] = logits
            result.key_positions[block.name] = block.k_pos
        logger.debug(f"{scheme}: {block.name} block {len(block.query_ids)} queries x {len(block.keys)} keys")
    return result


def attend_reference(
    grid: TokenGrid, q: np.ndarray, k: np.ndarray, v: np.ndarray, groups, keep_scores: bool = False
) -> AttentionOutput:
    """Plain RoPE attention on one uniform grid."""
    groups = as_groups(groups)
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = grid.num_tokens
    if q.shape[0] != n or k.shape[0] != n or v.shape[0] != n:
        raise DomainError(f"q/k/v must have {n} rows")
    pos = grid.positions
    qr = rotate_positions(q, pos, groups)
    kr = rotate_positions(k, pos, groups)
    values, w, logits = _dense_attention(qr, kr, v, 1.0, keep_scores)
    result = AttentionOutput(values=values, query_ids={"all": np.arange(n)})
    if keep_scores:
        result.weights, result.logits, result.key_positions = {"all": w}, {"all": logits}, {"all": pos}
    return result


# ---- phase consistency ----


def _token_positions(layout: RegionLayout, scheme: str, query_stride: float, params: SchemeParams) -> np.ndarray:
    if is_crpa(scheme):
        return crpa_key_positions(layout, query_stride)
    return shared_positions(scheme, layout.physical, layout.ratio, params)


def phase_consistency_error(layout: RegionLayout, scheme: str, params: Optional[SchemeParams] = None) -> float:
    """
    max over (query, key) token pairs and axes of |delta_scheme - delta_physical / S_q|.

    With e = position - physical / S_q per token, the pair error is |e_k - e_q|, so the
    maximum only needs the extremes of e over queries and keys.
    """
    params = params or SchemeParams()
    worst = 0.0
    for _, ids, stride in _query_classes(layout):
        pos = _token_positions(layout, scheme, stride, params)
        e = pos - layout.physical / stride
        e_q = e[ids]
        hi = np.maximum(e.max(axis=0) - e_q.min(axis=0), e_q.max(axis=0) - e.min(axis=0))
        worst = max(worst, float(np.max(np.abs(hi))))
    return worst


def pairwise_phase_errors(layout: RegionLayout, scheme: str, params: Optional[SchemeParams] = None) -> np.ndarray:
    """Brute-force |delta_scheme - delta_physical / S_q| for every pair, shape [n, n, ndim]."""
    params = params or SchemeParams()
    n = layout.num_tokens
    out = np.zeros((n, n, layout.ndim), dtype=np.float64)
    for _, ids, stride in _query_classes(layout):
        pos = _token_positions(layout, scheme, stride, params)
        for i in ids:
            d_scheme = pos - pos[i]
            d_phys = (layout.physical - layout.physical[i]) / stride
            out[i] = np.abs(d_scheme - d_phys)
    return out


def toy_layout(ratio: int = 2) -> RegionLayout:
    """Nine LR positions with cells 3 and 4 refined by `ratio` (11 tokens at ratio 2)."""
    return RegionLayout.from_boxes((9,), ratio, [((3,), (5,))])

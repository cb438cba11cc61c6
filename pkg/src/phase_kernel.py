"""
Amplitude-phase decomposition of the RoPE score.

For pair i with A_i = q_2i k_2i + q_2i+1 k_2i+1 and B_i = q_2i+1 k_2i - q_2i k_2i+1,
q^T R(delta) k = sum_i C_i cos(omega_i delta + phi_i), C_i = hypot(A_i, B_i),
phi_i = atan2(-B_i, A_i).
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from errors import DomainError
from rope_core import FrequencySchedule
from schemas import KernelTermRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelTerm:
    omega: float
    amplitude: float
    phase: float


@dataclass(frozen=True)
class PhaseKernel:
    """Mixture of sinusoidal kernels; `raw` keeps (A_i, B_i) for audit when available"""

    terms: tuple[KernelTerm, ...]
    raw: Optional[tuple[tuple[float, float], ...]] = field(default=None, compare=False)

    def __post_init__(self):
        for t in self.terms:
            if t.omega <= 0:
                raise DomainError(f"kernel frequency must be positive, got {t.omega}")
            if t.amplitude < 0:
                raise DomainError(f"kernel amplitude must be non-negative, got {t.amplitude}")

    @property
    def omegas(self) -> np.ndarray:
        return np.array([t.omega for t in self.terms], dtype=np.float64)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([t.amplitude for t in self.terms], dtype=np.float64)

    @property
    def phases(self) -> np.ndarray:
        return np.array([t.phase for t in self.terms], dtype=np.float64)


def pair_coefficients(q, k) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair (A_i, B_i)."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    a = q[0::2] * k[0::2] + q[1::2] * k[1::2]
    b = q[1::2] * k[0::2] - q[0::2] * k[1::2]
    return a, b


def decompose(q, k, fs: FrequencySchedule) -> PhaseKernel:
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != (fs.dim,) or k.shape != (fs.dim,):
        raise DomainError(
            f"q and k must both have length {fs.dim}, got {q.shape[-1]} and {k.shape[-1]}"
        )
    a, b = pair_coefficients(q, k)
    amplitude = np.hypot(a, b)
    # atan2(0, 0) is platform-dependent
    phase = np.where(amplitude == 0.0, 0.0, np.arctan2(-b, a))
    # map -pi onto pi so phases live in (-pi, pi]
    phase = np.where(phase == -np.pi, np.pi, phase)
    terms = tuple(
        KernelTerm(omega=float(w), amplitude=float(c), phase=float(ph))
        for w, c, ph in zip(fs.omega, amplitude, phase)
    )
    return PhaseKernel(terms=terms, raw=tuple(zip(a.tolist(), b.tolist())))


def eval_kernel(kernel: PhaseKernel, delta) -> float | np.ndarray:
    """sum_i C_i cos(omega_i delta + phi_i); `delta` may be a scalar or an array."""
    if not kernel.terms:
        return np.zeros_like(np.asarray(delta, dtype=np.float64)) if np.ndim(delta) else 0.0
    d = np.asarray(delta, dtype=np.float64)
    values = np.cos(d[..., None] * kernel.omegas + kernel.phases) @ kernel.amplitudes
    return float(values) if values.ndim == 0 else values


def dominant_frequencies(kernel: PhaseKernel, top_n: int) -> list[tuple[float, float]]:
    """Terms by descending amplitude, ties broken by ascending frequency."""
    if top_n < 1:
        raise DomainError(f"top_n must be >= 1, got {top_n}")
    ordered = sorted(kernel.terms, key=lambda t: (-t.amplitude, t.omega))
    return [(t.omega, t.amplitude) for t in ordered[:top_n]]


def kernel_to_records(kernel: PhaseKernel) -> list[dict]:
    return [
        KernelTermRecord(omega=t.omega, amplitude=t.amplitude, phase=t.phase).model_dump()
        for t in kernel.terms
    ]


def kernel_from_records(records: Iterable[dict]) -> PhaseKernel:
    parsed = [KernelTermRecord.model_validate(r) for r in records]
    return PhaseKernel(
        terms=tuple(KernelTerm(omega=r.omega, amplitude=r.amplitude, phase=r.phase) for r in parsed)
    )

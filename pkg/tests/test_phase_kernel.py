import math

import numpy as np
import pytest
from pydantic import ValidationError

from errors import DomainError
from phase_kernel import (
    KernelTerm,
    PhaseKernel,
    decompose,
    dominant_frequencies,
    eval_kernel,
    kernel_from_records,
    kernel_to_records,
    pair_coefficients,
)
from rope_core import make_frequencies, rotate, score_relative


def test_kernel_reproduces_relative_score(rng):
    fs = make_frequencies(32)
    q, k = rng.standard_normal(32), rng.standard_normal(32)
    kernel = decompose(q, k, fs)
    deltas = np.linspace(-300, 300, 61)
    expected = [score_relative(q, k, d, fs) for d in deltas]
    np.testing.assert_allclose(eval_kernel(kernel, deltas), expected, atol=1e-9)
    assert eval_kernel(kernel, 17.0) == pytest.approx(score_relative(q, k, 17.0, fs), abs=1e-9)


@pytest.mark.parametrize("dim", [2, 4, 64, 128])
def test_kernel_matches_relative_score_batch(dim):
    fs = make_frequencies(dim)
    gen = np.random.default_rng(1000 + dim)
    for _ in range(2500):
        q, k = gen.standard_normal(dim), gen.standard_normal(dim)
        delta = gen.uniform(-50, 50)
        assert eval_kernel(decompose(q, k, fs), delta) == pytest.approx(score_relative(q, k, delta, fs), abs=1e-12)


def test_amplitudes_non_negative_and_phases_in_range(rng):
    fs = make_frequencies(64)
    kernel = decompose(rng.standard_normal(64), rng.standard_normal(64), fs)
    assert np.all(kernel.amplitudes >= 0)
    assert np.all(kernel.phases > -math.pi)
    assert np.all(kernel.phases <= math.pi)


def test_zero_pair_has_zero_phase():
    fs = make_frequencies(4)
    kernel = decompose(np.array([0.0, 0.0, 1.0, 2.0]), np.array([3.0, 4.0, 1.0, 0.0]), fs)
    assert kernel.terms[0].amplitude == 0.0
    assert kernel.terms[0].phase == 0.0


def test_minus_pi_maps_to_pi():
    fs = make_frequencies(2)
    kernel = decompose(np.array([-1.0, 0.0]), np.array([1.0, 0.0]), fs)
    assert kernel.terms[0].amplitude == pytest.approx(1.0)
    assert kernel.terms[0].phase == math.pi


def test_pair_coefficients_closed_form():
    a, b = pair_coefficients(np.array([1.0, 2.0]), np.array([3.0, 5.0]))
    assert a[0] == 1 * 3 + 2 * 5
    assert b[0] == 2 * 3 - 1 * 5


def test_common_rotation_keeps_amplitudes(rng):
    fs = make_frequencies(16)
    q, k = rng.standard_normal(16), rng.standard_normal(16)
    before = decompose(q, k, fs).amplitudes
    after = decompose(rotate(q, 37.5, fs), rotate(k, 37.5, fs), fs).amplitudes
    np.testing.assert_allclose(after, before, atol=1e-12)


def test_decompose_length_mismatch():
    with pytest.raises(DomainError):
        decompose(np.ones(6), np.ones(8), make_frequencies(8))


def test_empty_kernel_evaluates_to_zero():
    empty = PhaseKernel(terms=())
    assert eval_kernel(empty, 3.0) == 0.0
    np.testing.assert_array_equal(eval_kernel(empty, np.arange(4.0)), np.zeros(4))


def test_dominant_frequencies_order_and_ties():
    kernel = PhaseKernel(
        terms=(
            KernelTerm(1.0, 0.5, 0.0),
            KernelTerm(0.1, 2.0, 0.0),
            KernelTerm(0.01, 2.0, 0.0),
            KernelTerm(0.001, 1.0, 0.0),
        )
    )
    assert dominant_frequencies(kernel, 3) == [(0.01, 2.0), (0.1, 2.0), (0.001, 1.0)]


def test_dominant_frequencies_needs_positive_count():
    with pytest.raises(DomainError):
        dominant_frequencies(PhaseKernel(terms=()), 0)


def test_invalid_terms_rejected():
    with pytest.raises(DomainError, match="amplitude"):
        PhaseKernel(terms=(KernelTerm(1.0, -0.1, 0.0),))
    with pytest.raises(DomainError, match="frequency"):
        PhaseKernel(terms=(KernelTerm(0.0, 1.0, 0.0),))


def test_records_export(rng):
    fs = make_frequencies(8)
    kernel = decompose(rng.standard_normal(8), rng.standard_normal(8), fs)
    records = kernel_to_records(kernel)
    assert set(records[0]) == {"omega", "amplitude", "phase"}
    assert kernel_from_records(records).terms == kernel.terms


def test_records_validated():
    with pytest.raises(ValidationError):
        kernel_from_records([{"omega": -1.0, "amplitude": 1.0, "phase": 0.0}])

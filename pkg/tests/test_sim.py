import json

import numpy as np
import pytest

from errors import DomainError, IngestionError
from helper import DEFAULT_SCHEMES
from phase_kernel import decompose
from schemas import LayoutFile, ScheduleConfigModel
from sim import (
    _INIT_HR,
    REPORT_COLUMNS,
    SWEEP_COLUMNS,
    RunReport,
    SimSettings,
    _noise,
    build_synthetic_model,
    center_box_mask,
    compare_schemes,
    load_layout,
    load_schedule,
    make_target,
    monotone_focus,
    ratio_sweep,
    reference_config,
    reference_latent,
    reports_frame,
    resolve_hr_cells,
    run_schedule,
    sim_model_for_grid,
    simulate_latent,
    sweep_frame,
)

GRID = 16


@pytest.fixture(scope="module")
def model():
    return sim_model_for_grid(GRID)


@pytest.fixture(scope="module")
def target(model):
    return make_target(model, GRID, seed=0)


def _cfg(coarse=10, mixed=20, fine=0, ratio=0.3):
    return ScheduleConfigModel(
        total_steps=coarse + mixed + fine,
        coarse_steps=coarse,
        mixed_steps=mixed,
        fine_steps=fine,
        hr_token_ratio=ratio,
    )


def test_model_sized_to_grid(model):
    assert len(model.groups) == 2
    assert model.dim == 32
    assert monotone_focus(model.groups, 2 * GRID) == 2
    assert [h.focus for h in model.heads] == [2, 3]


def test_synthetic_model_validation():
    with pytest.raises(DomainError, match="num_heads"):
        build_synthetic_model(0, 16, 1.0, 0)
    with pytest.raises(DomainError, match="sharpness"):
        build_synthetic_model(1, 16, -1.0, 0)


def test_synthetic_amplitudes_sum_to_gain(rng):
    m = build_synthetic_model(3, 16, 2.0, seed=4, gain=2.0)
    for head in m.heads:
        assert head.amplitudes[0].sum() == pytest.approx(2.0 * 4.0)
        assert np.all(head.phases[0] == 0)


def test_synthetic_heads_decompose_to_their_amplitudes():
    m = build_synthetic_model(3, 16, 2.0, seed=4, num_axes=2, focus=1, focus_step=2)
    for head in m.heads:
        for g, amps, phases in zip(m.groups, head.amplitudes, head.phases):
            kernel = decompose(head.q[g.start:g.stop], head.k[g.start:g.stop], g.schedule)
            np.testing.assert_allclose(kernel.amplitudes, amps, rtol=0, atol=1e-9)
            np.testing.assert_allclose(kernel.phases, phases, rtol=0, atol=1e-9)


def test_target_shapes(target):
    assert target.fine_shape == (2 * GRID, 2 * GRID)
    assert target.lr_shape == (GRID, GRID)
    assert target.hr.shape[-1] == 4
    block = target.hr[:2, :2].mean(axis=(0, 1))
    np.testing.assert_allclose(target.lr[0, 0], block)


def test_target_needs_two_axes():
    with pytest.raises(DomainError, match="two-axis"):
        make_target(build_synthetic_model(1, 16, 0.0, 0), 8)


def test_reference_run_converges_to_target(model, target):
    cfg = _cfg()
    ref = reference_latent(model, target, cfg)
    start = _noise(0, _INIT_HR, target.hr.shape)
    # every step contracts the max-norm error by at least 1 - eta * pull
    bound = (1 - model.eta * model.target_pull) ** cfg.total_steps * np.abs(start - target.hr).max()
    assert np.abs(ref - target.hr).max() <= bound + 1e-9


def test_reference_config_moves_every_step_to_fine():
    ref = reference_config(_cfg())
    assert (ref.coarse_steps, ref.mixed_steps, ref.fine_steps) == (0, 0, 30)


def test_reference_schedule_scores_zero(model, target):
    report = run_schedule(model, target, reference_config(_cfg()), "crpa")
    assert report.rms_global == 0.0
    assert report.rms_hr == 0.0


def test_full_ratio_crpa_equals_coarse_then_fine(model, target):
    mixed = simulate_latent(model, target, _cfg(10, 20, 0, 1.0), "crpa")
    fine = simulate_latent(model, target, _cfg(10, 0, 20, 1.0), "crpa")
    np.testing.assert_allclose(mixed, fine, rtol=0, atol=1e-12)


def test_runs_are_deterministic(model, target):
    a = simulate_latent(model, target, _cfg(), "pi-hr", seed=3)
    b = simulate_latent(model, target, _cfg(), "pi-hr", seed=3)
    np.testing.assert_array_equal(a, b)


def test_boundary_changes_the_result(model, target):
    with_band = simulate_latent(model, target, _cfg(), "crpa")
    without = simulate_latent(model, target, _cfg(), "crpa", settings=SimSettings(boundary=False))
    assert not np.allclose(with_band, without)


def test_compare_reports(model, target):
    reports = compare_schemes(model, target, _cfg(), ["pi-lr", "crpa"])
    assert [r.scheme for r in reports] == ["pi-lr", "crpa"]
    by_scheme = {r.scheme: r for r in reports}
    assert by_scheme["crpa"].phase_err == 0.0
    assert by_scheme["pi-lr"].phase_err > 0.0
    assert all(r.rms_global > 0 for r in reports)
    assert by_scheme["crpa"].stage_steps == {"coarse": 10, "mixed": 20, "fine": 0}
    assert set(by_scheme["crpa"].stage_seconds) == {"coarse", "mixed", "fine"}


def test_repeated_scheme_gives_identical_rows(model, target):
    first, _, again = compare_schemes(model, target, _cfg(), ["crpa", "pi-lr", "crpa"])
    assert first == again
    frame = reports_frame([first, again])
    assert frame.iloc[0].equals(frame.iloc[1])


def test_yarn_matches_pi_lr_on_low_frequency_heads(model, target):
    # every head frequency sits below the YaRN ramp, so YaRN interpolates fully
    reports = compare_schemes(model, target, _cfg(), ["pi-lr", "yarn"])
    assert reports[1].rms_global == pytest.approx(reports[0].rms_global, rel=1e-9)
    assert reports[1].rms_hr == pytest.approx(reports[0].rms_hr, rel=1e-9)


def test_compare_needs_schemes(model, target):
    with pytest.raises(DomainError, match="no schemes"):
        compare_schemes(model, target, _cfg(), [])


def test_sweep_gains_from_more_hr_tokens(model, target):
    low, full = ratio_sweep(model, target, _cfg(), [0.1, 1.0])
    assert (low.hr_token_ratio, full.hr_token_ratio) == (0.1, 1.0)
    assert full.rms_global < low.rms_global


@pytest.mark.slow
def test_crpa_ranks_first_on_32_grid():
    model = sim_model_for_grid(32)
    target = make_target(model, 32, seed=0)
    reports = compare_schemes(model, target, _cfg(), DEFAULT_SCHEMES)
    rms = {r.scheme: r.rms_global for r in reports}
    assert set(rms) == {"pi-lr", "pi-hr", "ntk", "pi-ntk", "yarn", "crpa"}
    assert min(rms, key=rms.get) == "crpa"


@pytest.mark.parametrize(
    "ratio,shape", [(0.1, (5, 5)), (0.3, (7, 11)), (0.6, (12, 13)), (1.0, (16, 16))]
)
def test_center_box_shapes(ratio, shape):
    mask = center_box_mask((16, 16), ratio)
    rows, cols = np.nonzero(mask)
    assert (rows.max() - rows.min() + 1, cols.max() - cols.min() + 1) == shape
    assert mask.sum() == shape[0] * shape[1]


def test_resolve_from_layout_file():
    layout = LayoutFile(axes=[4, 4], ratio=2, regions=[{"start": [0, 0], "stop": [2, 2]}])
    cells = resolve_hr_cells(layout, (4, 4), 2, 0.25)
    assert cells.sum() == 4
    assert cells[:2, :2].all()


def test_resolve_rejects_other_grid():
    layout = LayoutFile(axes=[4, 4], ratio=2, regions=[{"start": [0, 0], "stop": [2, 2]}])
    with pytest.raises(DomainError, match="does not match"):
        resolve_hr_cells(layout, (8, 8), 2, 0.25)


def test_resolve_checks_coverage():
    cells = np.zeros((4, 4), dtype=bool)
    cells[0, :] = True
    with pytest.raises(DomainError, match="mask coverage"):
        resolve_hr_cells(cells, (4, 4), 2, 0.5)


def test_load_layout_errors(tmp_path):
    with pytest.raises(IngestionError, match="not found"):
        load_layout(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"axes": [4], "ratio": 2, "regions": [{"start": [3], "stop": [5]}]}))
    with pytest.raises(IngestionError, match="invalid layout"):
        load_layout(str(bad))


def test_load_schedule(tmp_path):
    path = tmp_path / "schedule.json"
    path.write_text(json.dumps({"total_steps": 4, "coarse_steps": 1, "mixed_steps": 3, "hr_token_ratio": 0.5}))
    cfg = load_schedule(str(path))
    assert cfg.fine_steps == 0
    path.write_text(json.dumps({"total_steps": 4, "coarse_steps": 1, "mixed_steps": 1, "hr_token_ratio": 0.5}))
    with pytest.raises(IngestionError, match="invalid schedule"):
        load_schedule(str(path))


def test_report_frames():
    report = RunReport("crpa", 0.3, 0.5, 0.25, 0.0, {"coarse": 1}, {"coarse": 0.1234, "mixed": 1.0})
    frame = reports_frame([report])
    assert list(frame.columns) == REPORT_COLUMNS
    assert frame["seconds"].isna().all()
    assert reports_frame([report], timings=True)["seconds"][0] == pytest.approx(1.123)
    assert list(sweep_frame([report]).columns) == SWEEP_COLUMNS


def test_report_rejects_negative_deviation():
    with pytest.raises(DomainError):
        RunReport("crpa", 0.3, -1.0, 0.0, 0.0, {})


@pytest.mark.slow
def test_crpa_deviation_shrinks_with_ratio_on_32_grid():
    model = sim_model_for_grid(32)
    target = make_target(model, 32, seed=0)
    reports = ratio_sweep(model, target, _cfg(), [0.1, 0.3, 0.6, 1.0])
    rms = [r.rms_global for r in reports]
    assert all(b <= a for a, b in zip(rms, rms[1:]))

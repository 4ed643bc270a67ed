import numpy as np
import pytest

from conftest import MATRIX
from data_model import GridSpec, RecordingPlan
from model import ModelError, build_layered_model
from solver import (
    InstabilityError,
    LeapfrogStepper,
    energy_in_model,
    initial_state,
    rc2_peak,
    rc2_signal,
    run,
    step,
)

# homogeneous bar, 40 samples per wavelength at 2 MHz
FINE_DX = 5e-5
FINE_DT = 0.9 * FINE_DX / 4000.0


def _homogeneous(n_cells: int = 400, n_steps: int = 600):
    grid = GridSpec(n_cells=n_cells, dx=FINE_DX, dt=FINE_DT, n_steps=n_steps)
    return build_layered_model(grid, MATRIX, []), grid


def test_rc2_is_zero_outside_its_duration(excitation) -> None:
    assert rc2_signal(-1e-9, excitation) == 0.0
    assert rc2_signal(excitation.duration + 1e-9, excitation) == 0.0
    assert isinstance(rc2_signal(0.3e-6, excitation), float)
    values = rc2_signal(np.linspace(0.0, excitation.duration, 101), excitation)
    assert values.shape == (101,)
    assert values[0] == 0.0
    assert values[-1] == pytest.approx(0.0, abs=1e-12)


def test_rc2_peak_ignores_amplitude(excitation) -> None:
    peak = rc2_peak(excitation)
    assert 0.5 < peak <= 1.0
    assert rc2_peak(excitation.scaled(5.0)) == peak


def test_wavefront_moves_at_most_one_cell_per_step(excitation) -> None:
    model, grid = _homogeneous(n_steps=250)
    record = run(model, grid, excitation, RecordingPlan(probe_cells=(200,)))
    assert np.all(record.fields.probe_v[:190, 0] == 0.0)
    assert np.any(record.fields.probe_v[:, 0] != 0.0)
    assert np.all(record.fields.sensor_right == 0.0)


def test_run_is_linear_in_amplitude(excitation) -> None:
    model, grid = _homogeneous(n_steps=200)
    plan = RecordingPlan(snapshot_times=(0.5e-6,), probe_cells=(50,))
    one = run(model, grid, excitation, plan)
    three = run(model, grid, excitation.scaled(3.0), plan)
    np.testing.assert_allclose(three.fields.sensor_left, 3.0 * one.fields.sensor_left, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(three.fields.snapshot_T, 3.0 * one.fields.snapshot_T, rtol=1e-12, atol=1e-6)


def test_outgoing_pulse_has_the_requested_peak(excitation) -> None:
    model, grid = _homogeneous(n_steps=600)
    record = run(model, grid, excitation.scaled(2.0), RecordingPlan(probe_cells=(200,)))
    assert np.max(np.abs(record.fields.probe_v[:, 0])) == pytest.approx(2.0, rel=0.05)


def test_snapshots_hold_both_stress_half_steps(excitation) -> None:
    model, grid = _homogeneous(n_steps=100)
    plan = RecordingPlan(snapshot_stride=1, stride_window=(50 * FINE_DT, 60 * FINE_DT))
    record = run(model, grid, excitation, plan)
    np.testing.assert_array_equal(record.snapshot_steps, np.arange(50, 61))
    np.testing.assert_array_equal(record.fields.snapshot_T_prev[1:], record.fields.snapshot_T[:-1])
    assert record.snapshot_index(55 * FINE_DT) == 5


def test_energy_is_constant_after_the_excitation(excitation) -> None:
    model, grid = _homogeneous(n_cells=400, n_steps=500)
    times = tuple(np.linspace(1.2e-6, 4.0e-6, 8))
    record = run(model, grid, excitation, RecordingPlan(snapshot_times=times))
    total = energy_in_model(record, model).total
    assert total.min() > 0
    assert (total.max() - total.min()) / total.mean() < 1e-2


def test_layered_run_rejects_cfl_violation(excitation) -> None:
    grid = GridSpec(n_cells=100, dx=FINE_DX, dt=1.2 * FINE_DX / 4000.0, n_steps=10)
    model = build_layered_model(grid, MATRIX, [])
    with pytest.raises(ModelError, match="CFL"):
        run(model, grid, excitation)


def test_unstable_stepping_raises(excitation) -> None:
    grid = GridSpec(n_cells=60, dx=FINE_DX, dt=1.5 * FINE_DX / 4000.0, n_steps=10)
    model = build_layered_model(grid, MATRIX, [])
    state = initial_state(grid)
    with pytest.raises(InstabilityError) as info:
        for _ in range(5000):
            state = step(state, model, grid, excitation)
    assert info.value.step_index > 0


def test_probe_outside_grid_rejected(excitation) -> None:
    model, grid = _homogeneous(n_steps=5)
    with pytest.raises(ModelError, match="probe"):
        run(model, grid, excitation, RecordingPlan(probe_cells=(400,)))


def test_force_acts_at_half_steps(excitation) -> None:
    model, grid = _homogeneous(n_steps=5)
    stepper = LeapfrogStepper(model, grid, excitation)
    assert stepper.force(0) == pytest.approx(stepper.scale * rc2_signal(0.5 * FINE_DT, excitation))
    assert stepper.force(10_000) == 0.0

import numpy as np
import pytest

from data_model import (
    DifferentialField,
    Excitation,
    FieldSet,
    GridSpec,
    ParameterKind,
    ParameterSpec,
    RecordingPlan,
    SimulationRecord,
)
from difffield import RecordMismatchError, convergence_report, deviation_report, difference_field, differential_field

GRID = GridSpec(n_cells=4, dx=1e-3, dt=1e-7, n_steps=3)
EXC = Excitation(center_frequency=2e6)
SPEC = ParameterSpec(kind=ParameterKind.DENSITY_CONST_CP, reference_value=2600.0, delta=0.5)


def _fields(scale: float, n_snap: int = 2) -> FieldSet:
    return FieldSet(
        sensor_left=scale * np.array([1.0, 2.0, 3.0]),
        sensor_right=scale * np.array([0.0, 1.0, 0.0]),
        snapshot_v=scale * np.ones((n_snap, 5)),
        snapshot_T=scale * np.ones((n_snap, 4)),
        snapshot_T_prev=scale * np.ones((n_snap, 4)),
        probe_v=np.zeros((3, 0)),
        probe_T=np.zeros((3, 0)),
    )


def _record(scale: float, grid: GridSpec = GRID, steps=(1, 2)) -> SimulationRecord:
    return SimulationRecord(
        grid=grid,
        excitation=EXC,
        plan=RecordingPlan(),
        fields=_fields(scale, len(steps)),
        snapshot_steps=np.array(steps),
        force_scale=1.0,
    )


def test_difference_and_differential_scaling() -> None:
    diff = difference_field(_record(3.0), _record(1.0), SPEC)
    np.testing.assert_allclose(diff.fields.sensor_left, [2.0, 4.0, 6.0])
    np.testing.assert_allclose(diff.dv, 2.0)
    dfield = differential_field(diff)
    # divided by 2 * delta = 1
    np.testing.assert_allclose(dfield.dv_dP, 2.0)
    np.testing.assert_allclose(dfield.snapshot_times, [1e-7, 2e-7])


def test_identical_runs_give_zero_difference() -> None:
    diff = difference_field(_record(1.0), _record(1.0), SPEC)
    for array in diff.fields.arrays().values():
        assert not np.any(array)


def test_mismatched_grids_rejected() -> None:
    other = GridSpec(n_cells=4, dx=1e-3, dt=2e-7, n_steps=3)
    with pytest.raises(RecordMismatchError, match="grids differ"):
        difference_field(_record(1.0), _record(1.0, grid=other), SPEC)


def test_mismatched_snapshot_plans_rejected() -> None:
    with pytest.raises(RecordMismatchError, match="recording plans"):
        difference_field(_record(1.0), _record(1.0, steps=(1, 3)), SPEC)


def _cubic_differential(delta: float, p: float = 2.0) -> DifferentialField:
    """Central difference of v = x * P**3; exact derivative 3 P**2 x, error delta**2 x."""
    x = np.linspace(0.1, 1.0, 5)
    plus = (p + delta) ** 3 * x
    minus = (p - delta) ** 3 * x
    spec = ParameterSpec(kind=ParameterKind.LAYER_POSITION, reference_value=p, delta=delta)
    fields = FieldSet(
        sensor_left=np.zeros(3),
        sensor_right=np.zeros(3),
        snapshot_v=((plus - minus) / (2 * delta))[None, :],
        snapshot_T=np.zeros((1, 4)),
        snapshot_T_prev=np.zeros((1, 4)),
        probe_v=np.zeros((3, 0)),
        probe_T=np.zeros((3, 0)),
    )
    return DifferentialField(fields=fields, spec=spec, grid=GRID, snapshot_steps=np.array([2]))


def test_convergence_grows_with_delta() -> None:
    fields = [_cubic_differential(d) for d in (0.03, 0.01, 0.02)]
    report = convergence_report(fields, threshold=0.01, time=2e-7)
    assert report.deltas == [0.01, 0.02, 0.03]
    assert report.deviations[0] == 0.0
    # (d**2 - 0.01**2) / (12 + 0.01**2)
    assert report.deviations[2] == pytest.approx((0.03**2 - 0.01**2) / (12.0 + 0.01**2), rel=1e-6)
    assert report.monotonic
    assert report.max_deviation() == report.deviations[2]


def test_convergence_needs_one_kind() -> None:
    a = _cubic_differential(0.01)
    b = DifferentialField(
        fields=a.fields,
        spec=ParameterSpec(kind=ParameterKind.LAYER_THICKNESS, reference_value=2.0, delta=0.02),
        grid=GRID,
        snapshot_steps=a.snapshot_steps,
    )
    with pytest.raises(RecordMismatchError, match="kinds"):
        convergence_report([a, b])
    with pytest.raises(RecordMismatchError):
        convergence_report([a])


def test_deviation_report_masks_small_reference_points() -> None:
    values = [
        np.array([1.3, 0.9, -2.4]),
        np.array([1.0, 0.001, -2.0]),
        np.array([1.1, 0.5, -2.0]),
    ]
    conv = deviation_report([3.0, 1.0, 2.0], values, threshold=0.01)
    assert conv.deltas == [1.0, 2.0, 3.0]
    np.testing.assert_allclose(conv.deviations, [0.0, 0.1, 0.3], atol=1e-12)
    assert conv.monotonic
    with pytest.raises(RecordMismatchError):
        deviation_report([1.0, 2.0], values)

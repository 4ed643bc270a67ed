"""Staggered velocity-stress leapfrog for the 1D elastodynamic equations.

Velocity lives on the n_cells + 1 nodes x = i*dx, stress on the cell centres
x = (j + 1/2)*dx. After step n the state holds v(n*dt) and T((n + 1/2)*dt).
Both model edges are stress-free: the ghost stress beyond each end is zero.
The left edge node doubles as actuator and sensor.
"""

from typing import Optional, Union

import numpy as np
from loguru import logger

from data_model import (
    EnergyHistory,
    Excitation,
    FieldSet,
    GridSpec,
    MaterialField,
    RecordingPlan,
    SimulationRecord,
    WaveState,
)
from model import ModelError, check_cfl


class InstabilityError(Exception):
    """Raised when the time stepping produces non-finite values."""

    def __init__(self, message: str, step_index: int):
        super().__init__(message)
        self.step_index = step_index


PEAK_SAMPLES = 20001


def rc2_signal(t: Union[float, np.ndarray], exc: Excitation) -> Union[float, np.ndarray]:
    """Hann-windowed sine burst of n_cycles periods; exactly zero outside [0, duration]."""
    t_arr = np.asarray(t, dtype=float)
    duration = exc.duration
    inside = (t_arr >= 0.0) & (t_arr <= duration)
    envelope = 0.5 * (1.0 - np.cos(2.0 * np.pi * t_arr / duration))
    value = np.where(inside, exc.amplitude * envelope * np.sin(2.0 * np.pi * exc.center_frequency * t_arr), 0.0)
    if np.ndim(t) == 0:
        return float(value)
    return value


def rc2_peak(exc: Excitation) -> float:
    """Peak magnitude of the unit-amplitude burst."""
    unit = Excitation(center_frequency=exc.center_frequency, n_cycles=exc.n_cycles)
    t = np.linspace(0.0, unit.duration, PEAK_SAMPLES)
    return float(np.max(np.abs(rc2_signal(t, unit))))


def force_scale(model: MaterialField, grid: GridSpec, exc: Excitation) -> float:
    """Force-density scale giving the outgoing velocity pulse a peak of `amplitude`."""
    cell = min(exc.injection_cell, model.n_cells - 1)
    impedance = float(model.impedance[cell])
    return impedance / grid.dx / rc2_peak(exc)


def initial_state(grid: GridSpec) -> WaveState:
    return WaveState(v=np.zeros(grid.n_cells + 1), T=np.zeros(grid.n_cells), step_index=0)


class LeapfrogStepper:
    """Precomputed update coefficients for one model, grid and excitation."""

    def __init__(self, model: MaterialField, grid: GridSpec, exc: Excitation):
        if model.n_cells != grid.n_cells:
            raise ModelError(f"model has {model.n_cells} cells, grid has {grid.n_cells}")
        if not 0 <= exc.injection_cell <= grid.n_cells:
            raise ModelError(f"injection_cell {exc.injection_cell} outside nodes 0..{grid.n_cells}")
        self.grid = grid
        self.exc = exc
        node_rho = model.node_rho
        self.v_coeff = grid.dt / (node_rho * grid.dx)
        self.f_coeff = grid.dt / float(node_rho[exc.injection_cell])
        self.t_coeff = grid.dt * model.stiffness / grid.dx
        self.scale = force_scale(model, grid, exc)
        self._padded = np.zeros(grid.n_cells + 2)

    def force(self, step_index: int) -> float:
        """Force density acting during the step from step_index to step_index + 1."""
        return self.scale * rc2_signal((step_index + 0.5) * self.grid.dt, self.exc)

    def advance(self, state: WaveState) -> WaveState:
        padded = self._padded
        padded[1:-1] = state.T
        v = state.v + self.v_coeff * (padded[1:] - padded[:-1])
        f = self.force(state.step_index)
        if f != 0.0:
            v[self.exc.injection_cell] += self.f_coeff * f
        T = state.T + self.t_coeff * (v[1:] - v[:-1])
        return WaveState(v=v, T=T, step_index=state.step_index + 1)


def _check_finite(state: WaveState) -> None:
    if not (np.isfinite(state.v).all() and np.isfinite(state.T).all()):
        raise InstabilityError(f"non-finite field values at step {state.step_index}", state.step_index)


def step(state: WaveState, model: MaterialField, grid: GridSpec, exc: Excitation) -> WaveState:
    if state.v.shape != (grid.n_cells + 1,) or state.T.shape != (grid.n_cells,):
        raise ModelError(f"state shapes {state.v.shape}/{state.T.shape} do not match {grid.n_cells} cells")
    new_state = LeapfrogStepper(model, grid, exc).advance(state)
    _check_finite(new_state)
    return new_state


def run(
    model: MaterialField,
    grid: GridSpec,
    exc: Excitation,
    plan: Optional[RecordingPlan] = None,
    label: str = "run",
) -> SimulationRecord:
    plan = plan or RecordingPlan()
    check_cfl(model, grid, label)
    for cell in plan.probe_cells:
        if not 0 <= cell < grid.n_cells:
            raise ModelError(f"probe cell {cell} outside 0..{grid.n_cells - 1}")

    stepper = LeapfrogStepper(model, grid, exc)
    snapshot_steps = plan.snapshot_steps(grid)
    rows = {int(k): i for i, k in enumerate(snapshot_steps)}
    n_snap = len(snapshot_steps)
    probes = np.asarray(plan.probe_cells, dtype=int)

    sensor_left = np.empty(grid.n_steps)
    sensor_right = np.empty(grid.n_steps)
    snap_v = np.empty((n_snap, grid.n_cells + 1))
    snap_T = np.empty((n_snap, grid.n_cells))
    snap_T_prev = np.empty((n_snap, grid.n_cells))
    probe_v = np.empty((grid.n_steps, probes.size))
    probe_T = np.empty((grid.n_steps, probes.size))

    logger.info(f"{label}: {grid.n_steps} steps on {grid.n_cells} cells, {n_snap} snapshot(s)")
    state = initial_state(grid)
    for n in range(grid.n_steps):
        previous_T = state.T
        state = stepper.advance(state)
        _check_finite(state)
        sensor_left[n] = state.v[0]
        sensor_right[n] = state.v[-1]
        if probes.size:
            probe_v[n] = state.v[probes]
            probe_T[n] = state.T[probes]
        row = rows.get(state.step_index)
        if row is not None:
            snap_v[row] = state.v
            snap_T[row] = state.T
            snap_T_prev[row] = previous_T
    logger.debug(f"{label}: finished at t={grid.end_time * 1e6:.4f} us")

    fields = FieldSet(
        sensor_left=sensor_left,
        sensor_right=sensor_right,
        snapshot_v=snap_v,
        snapshot_T=snap_T,
        snapshot_T_prev=snap_T_prev,
        probe_v=probe_v,
        probe_T=probe_T,
    )
    return SimulationRecord(
        grid=grid,
        excitation=exc,
        plan=plan,
        fields=fields,
        snapshot_steps=snapshot_steps,
        force_scale=stepper.scale,
    )


def energy_in_model(record: SimulationRecord, model: MaterialField) -> EnergyHistory:
    """Spatially integrated kinetic and potential energy at every snapshot."""
    dx = record.grid.dx
    v = record.fields.snapshot_v
    T_mean = 0.5 * (record.fields.snapshot_T + record.fields.snapshot_T_prev)
    kinetic = np.sum(0.5 * model.node_rho * v**2, axis=-1) * dx
    potential = np.sum(T_mean**2 / (2.0 * model.stiffness), axis=-1) * dx
    return EnergyHistory(times=record.snapshot_times, kinetic=kinetic, potential=potential)

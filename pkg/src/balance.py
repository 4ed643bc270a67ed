"""Energy and information balance quantities on the recorded snapshots.

All densities are co-located on cells at the snapshot times t_n: velocities
are averaged over the two bounding nodes (kinetic terms are averaged as
node quantities), stresses over the two half steps around t_n, and stress
rates are the half-step difference over dt. Fluxes live on the velocity
nodes, so the divergence of a flux on a cell is the plain node difference,
which matches the solver stencil.

Every information quantity is scaled by P**2 / E_f with P the reference
value of the varied parameter.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from data_model import (
    BalanceTrace,
    DifferentialField,
    EnergyFields,
    EnergyHistory,
    Excitation,
    InfoFields,
    MaterialDerivatives,
    MaterialField,
    ParameterSpec,
    SimulationRecord,
    ValidityCase,
)
from model import UnsupportedParameterCombination, classify_parameter, interface_nodes
from solver import energy_in_model, rc2_signal


class BalanceError(Exception):
    """Custom exception for balance evaluation errors."""

    pass


LAMBDA_FORM = "lambda"
RHO_FORM = "rho"
ENERGY_MODES = ("plateau", "peak")

_FORMS_BY_CASE = {
    ValidityCase.CASE0: (LAMBDA_FORM,),
    ValidityCase.CASE1: (LAMBDA_FORM,),
    ValidityCase.CASE2: (LAMBDA_FORM, RHO_FORM),
    ValidityCase.CASE3: (RHO_FORM,),
}

_SOURCE_SIGNS = {
    (ValidityCase.CASE0, LAMBDA_FORM): {"q_f": 1.0, "q_T0": -1.0, "q_v0": -1.0},
    (ValidityCase.CASE1, LAMBDA_FORM): {"q_f": 1.0, "q_v": 1.0, "q_T": -1.0},
    (ValidityCase.CASE2, LAMBDA_FORM): {"q_f": 1.0, "q_v": 1.0, "q_T": -1.0},
    (ValidityCase.CASE2, RHO_FORM): {"q_f": 1.0, "q_v": 1.0, "q_T": 1.0},
    (ValidityCase.CASE3, RHO_FORM): {"q_f": 1.0, "q_v": 1.0, "q_T": 1.0},
}


@dataclass(slots=True)
class ResidualReport:
    times: np.ndarray
    residual: np.ndarray
    excluded: np.ndarray
    normalized_max: float
    term_scale: float


@dataclass(slots=True)
class InteractionWindow:
    name: str
    start: float
    end: float


@dataclass(slots=True)
class InterferenceReport:
    window: InteractionWindow
    kin_excursion: float
    pot_excursion: float
    total_excursion: float
    correlation: float
    tolerance: float = 0.1

    @property
    def ratio(self) -> float:
        scale = max(self.kin_excursion, self.pot_excursion)
        return self.total_excursion / scale if scale > 0 else 0.0

    @property
    def passed(self) -> bool:
        return self.ratio < self.tolerance and (self.correlation <= 0.0 or self.kin_excursion == 0.0)


@dataclass(slots=True)
class WaveCoefficients:
    r_v: float
    t_v: float
    r_e: float
    t_e: float
    r_v_expected: float
    t_v_expected: float
    echo_time: float
    extras: Dict[str, float] = field(default_factory=dict)


def _require_snapshots(record: SimulationRecord) -> None:
    if not record.has_snapshots:
        raise BalanceError("record holds no snapshots; add snapshot_times or a snapshot stride")


def _node_to_cell(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a[..., 1:] + a[..., :-1])


def _cell_to_node(a: np.ndarray, ghost: Optional[float] = 0.0) -> np.ndarray:
    """Average of the two cells around each node; outside cells are `ghost`, or replicate the edge if None."""
    if ghost is None:
        left, right = a[..., :1], a[..., -1:]
    else:
        pad_shape = a.shape[:-1] + (1,)
        left = right = np.full(pad_shape, ghost)
    padded = np.concatenate((left, a, right), axis=-1)
    return 0.5 * (padded[..., 1:] + padded[..., :-1])


def _node_gradient(T: np.ndarray, dx: float) -> np.ndarray:
    """Staggered dT/dx on the velocity nodes with zero ghost stress."""
    pad_shape = T.shape[:-1] + (1,)
    zero = np.zeros(pad_shape)
    padded = np.concatenate((zero, T, zero), axis=-1)
    return (padded[..., 1:] - padded[..., :-1]) / dx


def _stress_pair(T: np.ndarray, T_prev: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    return 0.5 * (T + T_prev), (T - T_prev) / dt


def _info_scale(spec: ParameterSpec, e_f: float) -> float:
    if e_f <= 0:
        raise BalanceError(f"normalization energy must be positive, got {e_f}")
    return spec.reference_value**2 / e_f


def _resolve_form(spec: ParameterSpec, form: Optional[str]) -> Tuple[ValidityCase, str]:
    try:
        case = classify_parameter(spec)
    except UnsupportedParameterCombination as e:
        raise BalanceError(str(e))
    allowed = _FORMS_BY_CASE[case]
    if form is None:
        return case, allowed[0]
    if form not in allowed:
        raise BalanceError(f"{spec.name}: form '{form}' is not valid for {case.name}, use one of {allowed}")
    return case, form


def _check_shapes(dfield: DifferentialField, base: SimulationRecord) -> None:
    _require_snapshots(base)
    if not np.array_equal(dfield.snapshot_steps, base.snapshot_steps):
        raise BalanceError("differential field and base record have different snapshot steps")


def excitation_energy(
    record: SimulationRecord,
    model: MaterialField,
    mode: str = "plateau",
    time: Optional[float] = None,
) -> float:
    """Normalization energy E_f of the excitation.

    plateau: total energy in the model once the excitation has ended (default
    at 1.2 signal durations). peak: energy of one period of a sinusoid with the
    outgoing pulse's peak velocity, per unit area.
    """
    exc = record.excitation
    if mode == "plateau":
        _require_snapshots(record)
        time = 1.2 * exc.duration if time is None else time
        row = record.snapshot_index(time)
        if abs(record.snapshot_times[row] - time) > 0.1 * exc.duration:
            raise BalanceError(f"no snapshot near t={time * 1e6:.4f} us for the plateau energy")
        history = energy_in_model(record, model)
        e_f = float(history.total[row])
    elif mode == "peak":
        window = record.sensor_times <= exc.duration
        v_peak = float(np.max(np.abs(record.fields.sensor_left[window])))
        cell = min(exc.injection_cell, model.n_cells - 1)
        e_f = 0.5 * float(model.impedance[cell]) * v_peak**2 / exc.center_frequency
    else:
        raise BalanceError(f"unknown energy normalization '{mode}', use one of {ENERGY_MODES}")
    if e_f <= 0:
        raise BalanceError("excitation energy is zero; nothing was excited")
    return e_f


def energy_fields(record: SimulationRecord, model: MaterialField, excitation: Excitation) -> EnergyFields:
    _require_snapshots(record)
    grid = record.grid
    v = record.fields.snapshot_v
    T_bar, _ = _stress_pair(record.fields.snapshot_T, record.fields.snapshot_T_prev, grid.dt)
    kin = _node_to_cell(0.5 * model.node_rho * v**2)
    pot = T_bar**2 / (2.0 * model.stiffness)
    poynting = -v * _cell_to_node(T_bar)

    forces = np.zeros_like(v)
    times = record.snapshot_times
    force = record.force_scale * rc2_signal(times, excitation)
    forces[:, excitation.injection_cell] = force
    kin_source = _node_to_cell(v * forces) - T_bar * np.diff(v, axis=-1) / grid.dx
    return EnergyFields(times=times, kin=kin, pot=pot, poynting=poynting, kin_source=kin_source)


class _Colocated:
    """Differential and base fields of one parameter variation at the snapshot times."""

    def __init__(
        self,
        dfield: DifferentialField,
        base: SimulationRecord,
        model: MaterialField,
        derivs: MaterialDerivatives,
    ):
        _check_shapes(dfield, base)
        dt = base.grid.dt
        self.dx = base.grid.dx
        self.dt = dt
        self.times = base.snapshot_times
        self.w = dfield.fields.snapshot_v
        self.S, self.S_dot = _stress_pair(dfield.fields.snapshot_T, dfield.fields.snapshot_T_prev, dt)
        self.T, self.T_dot = _stress_pair(base.fields.snapshot_T, base.fields.snapshot_T_prev, dt)
        self.model = model
        self.derivs = derivs
        self.compliance = model.compliance
        # (1/rho) drho/dP on cells and nodes
        self.g = derivs.d_rho / model.rho
        self.g_node = _cell_to_node(derivs.d_rho, ghost=None) / model.node_rho


def info_density(
    dfield: DifferentialField,
    base: SimulationRecord,
    model: MaterialField,
    derivs: MaterialDerivatives,
    spec: ParameterSpec,
    e_f: float,
    form: Optional[str] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Kinetic and potential parts of the information density on cells."""
    case, form = _resolve_form(spec, form)
    scale = _info_scale(spec, e_f)
    c = _Colocated(dfield, base, model, derivs)
    return _density_parts(c, case, form, scale)


def _density_parts(c: _Colocated, case: ValidityCase, form: str, scale: float) -> Tuple[np.ndarray, np.ndarray]:
    i_kin = _node_to_cell(0.5 * c.model.node_rho * c.w**2)
    pot = 0.5 * c.compliance * c.S**2
    if case != ValidityCase.CASE0:
        dc = c.derivs.d_compliance
        pot = pot - 0.5 * c.g * dc * c.T**2
        if form == LAMBDA_FORM:
            pot = pot - c.g * c.compliance * c.S * c.T
        else:
            pot = pot + dc * c.S * c.T
    return scale * i_kin, scale * pot


def info_flux(
    dfield: DifferentialField,
    base: SimulationRecord,
    model: MaterialField,
    derivs: MaterialDerivatives,
    spec: ParameterSpec,
    e_f: float,
) -> np.ndarray:
    """Information flux on the velocity nodes; positive is flow to the right."""
    case, _ = _resolve_form(spec, None)
    scale = _info_scale(spec, e_f)
    c = _Colocated(dfield, base, model, derivs)
    return _flux(c, case, scale)


def _flux(c: _Colocated, case: ValidityCase, scale: float) -> np.ndarray:
    flux = -c.w * _cell_to_node(c.S)
    if case != ValidityCase.CASE0 and np.any(c.g_node != 0.0):
        flux = flux + c.g_node * c.w * _cell_to_node(c.T)
    return scale * flux


def info_sources(
    dfield: DifferentialField,
    base: SimulationRecord,
    model: MaterialField,
    derivs: MaterialDerivatives,
    spec: ParameterSpec,
    excitation: Excitation,
    e_f: float,
    form: Optional[str] = None,
) -> Dict[str, np.ndarray]:
    """The source terms active for the variation's validity case, on cells."""
    case, form = _resolve_form(spec, form)
    scale = _info_scale(spec, e_f)
    c = _Colocated(dfield, base, model, derivs)
    return _sources(c, base, case, form, excitation, scale)


def _sources(
    c: _Colocated,
    base: SimulationRecord,
    case: ValidityCase,
    form: str,
    excitation: Excitation,
    scale: float,
) -> Dict[str, np.ndarray]:
    sources = {"q_f": scale * _force_source(c, base, excitation)}
    if case == ValidityCase.CASE0:
        T_x = _node_gradient(c.T, c.dx)
        sources["q_v0"] = scale * _node_to_cell(c.g_node * c.w * T_x)
        sources["q_T0"] = scale * c.derivs.d_compliance * c.S * c.T_dot
        return sources

    g_x = np.gradient(c.g, c.dx)
    sources["q_v"] = scale * g_x * _node_to_cell(c.w) * c.T
    h = c.derivs.d_rho_over_stiffness / c.model.rho
    if form == LAMBDA_FORM:
        sources["q_T"] = scale * h * c.S * c.T_dot
    else:
        sources["q_T"] = scale * h * c.S_dot * c.T
    return sources


def _force_source(c: _Colocated, base: SimulationRecord, excitation: Excitation) -> np.ndarray:
    node = excitation.injection_cell
    cell = min(node, c.model.n_cells - 1)
    forces = np.zeros_like(c.w)
    f = base.force_scale * rc2_signal(c.times, excitation)
    # the force scale follows the impedance at the injection cell
    dz_over_z = 0.5 * (c.derivs.d_rho[cell] / c.model.rho[cell] + c.derivs.d_stiffness[cell] / c.model.stiffness[cell])
    forces[:, node] = f * dz_over_z - f * c.g_node[node]
    return _node_to_cell(c.w * forces)


def info_fields(
    dfield: DifferentialField,
    base: SimulationRecord,
    model: MaterialField,
    derivs: MaterialDerivatives,
    spec: ParameterSpec,
    excitation: Excitation,
    e_f: float,
    form: Optional[str] = None,
) -> InfoFields:
    """Density, flux and sources of one variation in a single pass."""
    case, form = _resolve_form(spec, form)
    scale = _info_scale(spec, e_f)
    c = _Colocated(dfield, base, model, derivs)
    i_kin, i_pot = _density_parts(c, case, form, scale)
    info = InfoFields(
        times=c.times,
        i_kin=i_kin,
        i_pot=i_pot,
        i_flux=_flux(c, case, scale),
        sources=_sources(c, base, case, form, excitation, scale),
        source_signs=dict(_SOURCE_SIGNS[(case, form)]),
        spec=spec,
        e_f=e_f,
        dx=c.dx,
        form=form,
    )
    logger.debug(f"{spec.name}: information fields ({case.name}, {form}-form) on {c.times.size} snapshot(s)")
    return info


def integrate_space(values: np.ndarray, dx: float) -> np.ndarray:
    return np.sum(values, axis=-1) * dx


def interface_mask(derivs: MaterialDerivatives, width: int = 2) -> np.ndarray:
    """Cells within `width` of a jump in the material derivatives."""
    n = derivs.d_rho.shape[0]
    jumps = np.zeros(n, dtype=bool)
    for d in (derivs.d_rho, derivs.d_stiffness, derivs.d_compliance):
        change = np.diff(d) != 0.0
        jumps[:-1] |= change
        jumps[1:] |= change
    if derivs.spec.kind.is_geometric:
        jumps |= (derivs.d_rho != 0.0) | (derivs.d_stiffness != 0.0)
    mask = jumps.copy()
    for k in range(1, width + 1):
        mask[k:] |= jumps[:-k]
        mask[:-k] |= jumps[k:]
    return mask


def balance_residual(
    info: InfoFields,
    dt: float,
    exclude: Optional[np.ndarray] = None,
    edge_cells: int = 2,
) -> ResidualReport:
    """r = d(i_density)/dt + d(i_flux)/dx - net source, away from excluded cells."""
    times = info.times
    if times.size < 3:
        raise BalanceError("balance residual needs at least three consecutive snapshots")
    steps = np.rint(times / dt).astype(int)
    if np.any(np.diff(steps) != 1):
        raise BalanceError("balance residual needs snapshots at stride 1")

    density = info.i_density
    d_dt = (density[2:] - density[:-2]) / (2.0 * dt)
    d_dx = np.diff(info.i_flux, axis=-1)[1:-1] / info.dx
    source = info.net_source()[1:-1]
    residual = d_dt + d_dx - source

    n = density.shape[-1]
    excluded = np.zeros(n, dtype=bool) if exclude is None else exclude.copy()
    excluded[:edge_cells] = True
    excluded[n - edge_cells :] = True
    residual[:, excluded] = 0.0

    keep = ~excluded
    term_scale = max(
        float(np.max(np.abs(d_dt[:, keep]), initial=0.0)),
        float(np.max(np.abs(d_dx[:, keep]), initial=0.0)),
        float(np.max(np.abs(source[:, keep]), initial=0.0)),
    )
    worst = float(np.max(np.abs(residual), initial=0.0))
    normalized = worst / term_scale if term_scale > 0 else 0.0
    logger.debug(f"{info.spec.name}: normalized balance residual {normalized:.3e}")
    return ResidualReport(
        times=times[1:-1],
        residual=residual,
        excluded=excluded,
        normalized_max=normalized,
        term_scale=term_scale,
    )


def _trace_width(spec: ParameterSpec, dx: float) -> int:
    if spec.kind.is_geometric:
        return max(2, int(round(spec.delta / dx)) + 1)
    return 2


def balance_trace(info: InfoFields, model: MaterialField) -> BalanceTrace:
    """Spatial integrals of the information density and source traces per layer interface."""
    net = info.net_source()
    width = _trace_width(info.spec, info.dx)
    n = net.shape[-1]
    traces = {}
    for name, node in interface_nodes(model):
        lo, hi = max(0, node - width), min(n, node + width)
        traces[name] = integrate_space(net[:, lo:hi], info.dx)
    traces["total"] = integrate_space(net, info.dx)
    return BalanceTrace(
        times=info.times,
        i_kin=integrate_space(info.i_kin, info.dx),
        i_pot=integrate_space(info.i_pot, info.dx),
        source_traces=traces,
    )


def energy_trace(history: EnergyHistory) -> BalanceTrace:
    return BalanceTrace(times=history.times, i_kin=history.kinetic, i_pot=history.potential)


def cumulative(series: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Running time integral of a trace sampled at the snapshot times."""
    if series.size == 0:
        return series
    steps = np.diff(times, prepend=times[0])
    return np.cumsum(series * steps)


def travel_time(model: MaterialField, node_from: int, node_to: int) -> float:
    """Time for a wavefront to cross the cells between two velocity nodes."""
    lo, hi = sorted((node_from, node_to))
    return float(np.sum(model.dx / model.c_p[lo:hi]))


def interaction_windows(
    model: MaterialField,
    excitation: Excitation,
    layer_index: int = 0,
) -> List[InteractionWindow]:
    """Times the incident pulse overlaps the boundaries of one layer, for one signal duration each."""
    if not model.layers:
        return []
    layer = model.layers[layer_index]
    source = excitation.injection_cell
    duration = excitation.duration
    windows = []
    if not layer.touches_left:
        t_left = travel_time(model, source, layer.start)
        windows.append(InteractionWindow("left_entry", t_left, t_left + duration))
        if not layer.touches_right:
            inside = travel_time(model, layer.start, layer.end)
            t_right = t_left + inside
            windows.append(InteractionWindow("right_entry", t_right, t_right + duration))
            t_return = t_right + inside
            windows.append(InteractionWindow("left_return", t_return, t_return + duration))
    return windows


def _running_integral(series: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Trapezoidal time integral from the first sample."""
    steps = 0.5 * (series[1:] + series[:-1]) * np.diff(times)
    return np.concatenate(([0.0], np.cumsum(steps)))


def self_interference_check(
    trace: BalanceTrace,
    windows: Sequence[InteractionWindow],
    tolerance: float = 0.1,
) -> List[InterferenceReport]:
    """Excursions of the components about their plateaus within each window.

    Information generated inside a window (the running integral of the
    "total" source trace, when the trace has one) is taken off both
    components in equal shares before the straight line joining the
    window's end values is subtracted. What is left of the total is the
    part no source accounts for.
    """
    reports = []
    generated = trace.source_traces.get("total")
    for window in windows:
        inside = (trace.times >= window.start) & (trace.times <= window.end)
        if inside.sum() < 3:
            raise BalanceError(f"window {window.name} holds fewer than three trace samples")
        t = trace.times[inside]
        share = np.zeros(t.size) if generated is None else 0.5 * _running_integral(generated[inside], t)
        excursions = []
        for series in (trace.i_kin, trace.i_pot):
            s = series[inside] - share
            baseline = s[0] + (s[-1] - s[0]) * (t - t[0]) / (t[-1] - t[0])
            excursions.append(s - baseline)
        kin, pot = excursions
        total = kin + pot
        kin_max = float(np.max(np.abs(kin)))
        pot_max = float(np.max(np.abs(pot)))
        if kin_max > 0 and pot_max > 0:
            correlation = float(np.corrcoef(kin, pot)[0, 1])
        else:
            correlation = 0.0
        reports.append(
            InterferenceReport(
                window=window,
                kin_excursion=kin_max,
                pot_excursion=pot_max,
                total_excursion=float(np.max(np.abs(total))),
                correlation=correlation,
                tolerance=tolerance,
            )
        )
    return reports


def _peak_in(series: np.ndarray, times: np.ndarray, start: float, end: float) -> float:
    """Signed value of largest magnitude within [start, end]."""
    inside = (times >= start) & (times <= end)
    if not inside.any():
        raise BalanceError(f"no samples in [{start * 1e6:.4f}, {end * 1e6:.4f}] us")
    values = series[inside]
    return float(values[np.argmax(np.abs(values))])


def _energy_in(series: np.ndarray, times: np.ndarray, start: float, end: float, dt: float) -> float:
    inside = (times >= start) & (times <= end)
    return float(np.sum(series[inside] ** 2) * dt)


def measure_wave_coefficients(
    record: SimulationRecord,
    model: MaterialField,
    probe_before: int,
    probe_inside: int,
    probe_after: int,
    layer_index: int = 0,
) -> WaveCoefficients:
    """Velocity and energy reflection/transmission at the left boundary of one layer.

    The probes are velocity nodes in the matrix before the layer, inside it and
    in the matrix after it; the record must hold them as probe cells.
    """
    cells = list(record.plan.probe_cells)
    for node in (probe_before, probe_inside, probe_after):
        if node not in cells:
            raise BalanceError(f"probe node {node} was not recorded")
    layer = model.layers[layer_index]
    exc = record.excitation
    times = record.sensor_times
    dt = record.grid.dt
    d = exc.duration
    src = exc.injection_cell
    v_before = record.fields.probe_v[:, cells.index(probe_before)]
    v_inside = record.fields.probe_v[:, cells.index(probe_inside)]
    v_after = record.fields.probe_v[:, cells.index(probe_after)]

    t_inc = travel_time(model, src, probe_before)
    t_echo = t_inc + 2.0 * travel_time(model, probe_before, layer.start)
    t_in = travel_time(model, src, probe_inside)
    t_out = travel_time(model, src, probe_after)

    incident = _peak_in(v_before, times, t_inc, t_inc + d)
    echo = _peak_in(v_before, times, t_echo, t_echo + d)
    transmitted = _peak_in(v_after, times, t_out, t_out + d)

    z1 = float(model.impedance[probe_before])
    z2 = float(model.impedance[min(probe_inside, model.n_cells - 1)])
    e_inc = _energy_in(v_before, times, t_inc, t_inc + d, dt)
    e_echo = _energy_in(v_before, times, t_echo, t_echo + d, dt)
    e_in = _energy_in(v_inside, times, t_in, t_in + d, dt)

    r_expected = (z1 - z2) / (z1 + z2)
    t_expected = 2.0 * z1 / (z1 + z2)
    return WaveCoefficients(
        r_v=echo / incident,
        t_v=transmitted / incident,
        r_e=e_echo / e_inc,
        t_e=z2 * e_in / (z1 * e_inc),
        r_v_expected=r_expected,
        # crossing both layer boundaries
        t_v_expected=t_expected * (2.0 * z2 / (z1 + z2)),
        echo_time=t_echo + 0.5 * d,
        extras={"incident_peak": incident, "echo_peak": echo, "transmitted_peak": transmitted},
    )

"""Sensor-side structural information in Cbits.

At a stress-free model edge only the kinetic part of the information density
survives, so the sensor series is (P**2 / E_f) * (rho / 2) * (dv/dP)**2 in the
absolute normalization, or P**2 * (dv/dP)**2 / M0**2 in the relative one,
where M0**2 is the windowed base-run sensor energy, sum(v**2) * dt, divided by
the window length. The division keeps M0**2 in the units of a squared
amplitude and cancels in every ratio between examples sharing a window.
"""

from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from data_model import CbitReport, CbitRow, DifferentialField, MaterialField, ParameterSpec, SensorInfoSeries, SimulationRecord


class CbitError(Exception):
    """Custom exception for sensor information errors."""

    pass


ABSOLUTE = "absolute"
RELATIVE = "relative"
BOUNDARIES = ("left", "right")

EXAMPLES = ("position", "thickness", "sound_speed", "density")
REFERENCE_EXAMPLE = "density"
DEFAULT_WINDOW = (0.0, 20e-6)

# named sensor windows in seconds
SENSOR_WINDOWS: Dict[str, Tuple[float, float]] = {
    "excitation": (0.0, 1.0e-6),
    "reflection_left": (10.0e-6, 11.0e-6),
    "transmission": (12.22e-6, 13.22e-6),
    "reflection_right": (14.44e-6, 15.44e-6),
    "multiple_right": (16.67e-6, 17.67e-6),
    "multiple_left": (18.9e-6, 19.9e-6),
}


def _window_mask(times: np.ndarray, window: Optional[Tuple[float, float]]) -> np.ndarray:
    if window is None:
        return np.ones(times.shape, dtype=bool)
    start, end = window
    if start > end:
        raise CbitError(f"window start {start} after end {end}")
    return (times >= start) & (times <= end)


def normalization_mode(
    mode: str,
    e_f: Optional[float] = None,
    base_series: Optional[np.ndarray] = None,
    times: Optional[np.ndarray] = None,
    window: Optional[Tuple[float, float]] = None,
) -> float:
    """E_f for the absolute mode, M0**2 of the base sensor signal for the relative one.

    M0**2 is the mean square of the base signal over the window, i.e. its
    dt-weighted energy divided by the window length.
    """
    if mode == ABSOLUTE:
        if e_f is None or e_f <= 0:
            raise CbitError("absolute normalization needs a positive E_f")
        return float(e_f)
    if mode == RELATIVE:
        if base_series is None or times is None:
            raise CbitError("relative normalization needs the base-run sensor record")
        mask = _window_mask(times, window)
        if not mask.any():
            raise CbitError("relative normalization window holds no samples")
        m0_sq = float(np.mean(base_series[mask] ** 2))
        if m0_sq == 0.0:
            raise CbitError(f"base sensor signal is identically zero in window {window}")
        return m0_sq
    raise CbitError(f"unknown normalization mode '{mode}', use '{ABSOLUTE}' or '{RELATIVE}'")


def _sensor_rho(model: MaterialField, boundary: str) -> float:
    node_rho = model.node_rho
    return float(node_rho[0] if boundary == "left" else node_rho[-1])


def sensor_info(
    dfield: DifferentialField,
    model: MaterialField,
    spec: ParameterSpec,
    e_f: Optional[float] = None,
    mode: str = ABSOLUTE,
    base: Optional[SimulationRecord] = None,
    window: Optional[Tuple[float, float]] = None,
) -> Dict[str, SensorInfoSeries]:
    if base is not None:
        for boundary, kind in zip(BOUNDARIES, base.boundaries):
            if kind != "stress_free":
                raise CbitError(f"{boundary} boundary is '{kind}', sensor information needs a stress-free edge")
    times = dfield.grid.step_times()
    p_sq = spec.reference_value**2
    result = {}
    for boundary in BOUNDARIES:
        dv = getattr(dfield.fields, f"sensor_{boundary}")
        if mode == ABSOLUTE:
            norm = normalization_mode(ABSOLUTE, e_f=e_f)
            series = p_sq / norm * 0.5 * _sensor_rho(model, boundary) * dv**2
        else:
            if base is None:
                raise CbitError("relative normalization needs the base-run record")
            norm = normalization_mode(
                RELATIVE,
                base_series=getattr(base.fields, f"sensor_{boundary}"),
                times=times,
                window=window,
            )
            if norm < 1e-12 * float(np.max(getattr(base.fields, f"sensor_{boundary}") ** 2)):
                logger.warning(f"{spec.name}/{boundary}: tiny base energy in relative window {window}")
            series = p_sq * dv**2 / norm
        result[boundary] = SensorInfoSeries(
            boundary=boundary,
            times=times,
            series=series,
            spec=spec,
            normalization=mode,
            window=window,
        )
    return result


def cbit_integral(series: SensorInfoSeries, window: Tuple[float, float], factor: float = 1.0) -> float:
    """dt-weighted sum of the series over the window, times the reporting factor."""
    times = series.times
    if times.size < 2:
        raise CbitError("series too short to integrate")
    dt = float(times[1] - times[0])
    start, end = window
    if start < -0.5 * dt or end > times[-1] + 0.5 * dt:
        raise CbitError(
            f"window [{start * 1e6:.4f}, {end * 1e6:.4f}] us outside the record [0, {times[-1] * 1e6:.4f}] us"
        )
    mask = _window_mask(times, window)
    if not mask.any():
        raise CbitError(f"window [{start * 1e6:.4f}, {end * 1e6:.4f}] us holds no samples")
    return float(np.sum(series.series[mask]) * dt * factor)


def _peak(series: SensorInfoSeries, window: Tuple[float, float]) -> float:
    mask = _window_mask(series.times, window)
    return float(np.max(series.series[mask])) if mask.any() else 0.0


def report(
    examples: Mapping[str, Mapping[str, SensorInfoSeries]],
    window: Tuple[float, float] = DEFAULT_WINDOW,
    anchor: Optional[Tuple[str, str, float]] = ("position", "left", 102.41),
    required: Sequence[str] = EXAMPLES,
) -> CbitReport:
    """Peaks, windowed integrals and splits for every example and boundary."""
    missing = [name for name in required if name not in examples]
    if missing:
        raise CbitError(f"incomplete example set, missing {missing}")
    modes = {s.normalization for per in examples.values() for s in per.values()}
    if len(modes) > 1:
        raise CbitError(f"examples mix normalization modes {sorted(modes)}")
    mode = modes.pop() if modes else ABSOLUTE

    raw = {name: {b: cbit_integral(per[b], window) for b in BOUNDARIES} for name, per in examples.items()}
    if anchor is not None and anchor[0] in raw:
        name, boundary, value = anchor
        if raw[name][boundary] <= 0:
            raise CbitError(f"anchor integral {name}/{boundary} is zero, cannot calibrate")
        factor = value / raw[name][boundary]
        provenance = f"calibrated on {name}/{boundary} integral = {value}"
    else:
        factor = 1.0
        provenance = "uncalibrated (plain dt-weighted sum)"
    logger.info(f"Cbit reporting factor {factor:.6g}: {provenance}")

    rows = []
    totals = {"reflection": 0.0, "transmission": 0.0}
    example_totals = {}
    for name, per in examples.items():
        integrals = {b: raw[name][b] * factor for b in BOUNDARIES}
        total = integrals["left"] + integrals["right"]
        example_totals[name] = total
        totals["reflection"] += integrals["left"]
        totals["transmission"] += integrals["right"]
        for boundary in BOUNDARIES:
            rows.append(
                CbitRow(
                    example=name,
                    boundary=boundary,
                    peak=_peak(per[boundary], window),
                    integral=integrals[boundary],
                    percent=100.0 * integrals[boundary] / total if total > 0 else 0.0,
                    window_start_us=window[0] * 1e6,
                    window_end_us=window[1] * 1e6,
                    normalization_mode=mode,
                )
            )

    multipliers = {}
    reference = example_totals.get(REFERENCE_EXAMPLE, 0.0)
    if reference > 0:
        multipliers = {
            name: total / reference for name, total in example_totals.items() if name != REFERENCE_EXAMPLE
        }
    return CbitReport(rows=rows, factor=factor, factor_provenance=provenance, totals=totals, multipliers=multipliers)

"""Acceptance checks run by `verify <preset>`.

Every preset has its own list of checks. A check is primary unless it
compares an absolute value whose convention (staggering, burst shape)
differs between codes; secondary checks are reported but never fail a run.

Measured series are read back from the CSV artefacts listed in the run's
manifest, after every checksum has been verified. The in-memory run only
supplies the configuration, the layered model and the record metadata.
"""

import tempfile
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import tomli_w
from loguru import logger

from balance import (
    interaction_windows,
    measure_wave_coefficients,
    self_interference_check,
    travel_time,
)
from config import ConfigError, RunConfig, load_preset, parse_config, serialize_config
from data_model import GEOMETRIC_KINDS, BalanceTrace, ParameterKind
from difffield import deviation_report
from manifest import Manifest, ManifestError
from orchestrator import Orchestrator, RunBundle
from writers import Table

# (example, boundary) -> (integral in Cbit/m, percent of the example's total)
CBIT_TABLE = {
    ("position", "left"): (102.41, None),
    ("thickness", "left"): (3.2991, 55.6),
    ("thickness", "right"): (2.6356, 44.4),
    ("sound_speed", "left"): (6.5552, 3.8),
    ("sound_speed", "right"): (166.48, 96.2),
    ("density", "left"): (0.0953, 96.3),
    ("density", "right"): (0.0037, 3.7),
}
CBIT_PEAKS = {("position", "left"): 4184.2, ("sound_speed", "right"): 13491.0}
CBIT_TOTALS = {"reflection": 112.36, "transmission": 169.12}
CBIT_MULTIPLIERS = {"thickness": 60.0, "position": 1000.0, "sound_speed": 1750.0}

ECHO_TIMES_US = (10.0, 14.44)
CONVERGENCE_TIME_US = 6.53
CAUSAL_GUARD = 0.2e-6
# integrals below this share of the largest one are round-off
AMPLITUDE_FLOOR = 1e-9


@dataclass(slots=True)
class Check:
    name: str
    measured: float
    expected: str
    passed: bool
    primary: bool = True

    @property
    def status(self) -> str:
        if self.passed:
            return "pass"
        return "FAIL" if self.primary else "off"


@dataclass(slots=True)
class VerificationReport:
    preset: str
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.primary)

    def table(self) -> Table:
        rows = [(c.name, c.measured, c.expected, c.status) for c in self.checks]
        failed = sum(1 for c in self.checks if c.primary and not c.passed)
        return Table(
            ["check", "measured", "expected", "status"],
            rows,
            title=f"verify {self.preset}",
            notes=[f"{len(self.checks)} check(s), {failed} primary failure(s)"],
        )


def _within(name: str, measured: float, expected: float, tol: float, relative: bool = False, primary: bool = True) -> Check:
    limit = tol * abs(expected) if relative else tol
    label = f"{expected:.6g} +/- {tol * 100:.3g}%" if relative else f"{expected:.6g} +/- {tol:.3g}"
    return Check(name, float(measured), label, bool(abs(measured - expected) <= limit), primary)


def _at_most(name: str, measured: float, limit: float) -> Check:
    return Check(name, float(measured), f"<= {limit:.3g}", bool(measured <= limit))


def _at_least(name: str, measured: float, limit: float) -> Check:
    return Check(name, float(measured), f">= {limit:.3g}", bool(measured >= limit))


def coarsened(cfg: RunConfig, factor: int, keep: Optional[Sequence[str]] = None) -> RunConfig:
    """The same physical setup on a grid `factor` times coarser in space and time."""
    data = tomllib.loads(serialize_config(cfg))
    grid = data["grid"]
    if grid["n_cells"] % factor:
        raise ConfigError(f"{grid['n_cells']} cells do not coarsen by {factor}", field="grid.n_cells")
    grid["n_cells"] //= factor
    grid["dx"] *= factor
    grid["dt"] *= factor
    grid["n_steps"] //= factor
    recording = data.setdefault("recording", {})
    recording["probe_cells"] = [c // factor for c in recording.get("probe_cells", [])]
    variations = []
    for v in data.get("variations", []):
        if keep is not None and v.get("label") not in keep:
            continue
        if ParameterKind(v["kind"]) in GEOMETRIC_KINDS:
            v["delta"] *= factor
        variations.append(v)
    data["variations"] = variations
    data["name"] = f"{cfg.name}_coarse{factor}"
    data.setdefault("output", {}).update({"snapshots": False, "formats": ["csv"]})
    return parse_config(tomli_w.dumps(data), source=f"{cfg.name} (coarsened x{factor})")


def amplitude_change(
    unit: Mapping[Tuple[str, str], float],
    scaled: Mapping[Tuple[str, str], float],
    floor: float = AMPLITUDE_FLOOR,
) -> float:
    """Largest relative change between two sets of Cbit integrals.

    Rows at or below `floor` times the largest integral carry no information
    and are left out.
    """
    top = max((abs(v) for v in unit.values()), default=0.0)
    worst = 0.0
    for key, a in unit.items():
        if abs(a) <= floor * top:
            continue
        worst = max(worst, abs(scaled[key] - a) / abs(a))
    return worst


def _run(cfg: RunConfig, stage: str, out_dir: Path, threads: Optional[int]) -> RunBundle:
    return Orchestrator.build(cfg, out_dir=str(out_dir), threads=threads).run(stage)


# -- reading artefacts -------------------------------------------------------


def _columns(manifest: Manifest, relative: str) -> Dict[str, np.ndarray]:
    """Numeric columns of a manifest-listed CSV."""
    rows = manifest.read_csv(relative)
    if not rows:
        raise ManifestError(f"{relative} holds no rows")
    columns = {}
    for key in rows[0]:
        try:
            columns[key] = np.array([float(r[key]) for r in rows])
        except ValueError:
            continue
    return columns


def _times(manifest: Manifest, relative: str, dt: float) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Columns of a time series, with the rounded microsecond column snapped back to the grid."""
    columns = _columns(manifest, relative)
    return np.rint(columns["time_us"] * 1e-6 / dt) * dt, columns


def _summary(manifest: Manifest, name: str) -> Dict[str, float]:
    return {r["quantity"]: float(r["value"]) for r in manifest.read_csv(f"{name}/balance_summary.csv")}


def _trace(manifest: Manifest, name: str, dt: float) -> BalanceTrace:
    times, c = _times(manifest, f"{name}/info_trace.csv", dt)
    sources = {k.removeprefix("source_"): v for k, v in c.items() if k.startswith("source_")}
    return BalanceTrace(times=times, i_kin=c["i_kin"], i_pot=c["i_pot"], source_traces=sources)


def _variation_names(manifest: Manifest) -> List[str]:
    return [p.split("/")[0] for p in manifest.find("/difference_sensors.csv")]


def _integrals(manifest: Manifest) -> Dict[Tuple[str, str], float]:
    return {(r["example"], r["boundary"]): float(r["integral_cbits_per_m"]) for r in manifest.read_csv("cbit_report.csv")}


def _in_window(times: np.ndarray, start: float, end: float) -> np.ndarray:
    return (times >= start) & (times <= end)


def _value_at(series: np.ndarray, times: np.ndarray, t: float) -> float:
    return float(series[int(np.argmin(np.abs(times - t)))])


def _stride_integral(series: np.ndarray, times: np.ndarray, dt: float) -> float:
    """Sum over the consecutive-step part of a trace, times dt."""
    steps = np.rint(times / dt).astype(int)
    consecutive = np.zeros(steps.size, dtype=bool)
    link = np.diff(steps) == 1
    consecutive[1:] |= link
    consecutive[:-1] |= link
    return float(np.sum(series[consecutive]) * dt)


def _onset(series: np.ndarray, times: np.ndarray, start: float, end: float, level: float = 0.05) -> float:
    inside = _in_window(times, start, end)
    values = np.abs(series[inside])
    first = int(np.argmax(values > level * values.max()))
    return float(times[inside][first])


def _max_abs(*arrays: np.ndarray) -> float:
    return max(float(np.max(np.abs(a), initial=0.0)) for a in arrays)


# -- checks per preset ---------------------------------------------------------


def _causal_checks(bundle: RunBundle, manifest: Manifest) -> List[Check]:
    checks = []
    model = bundle.model
    exc = bundle.config.excitation_spec()
    dt = bundle.config.grid.dt
    times, base = _times(manifest, "base/sensors.csv", dt)
    pulse_peak = float(np.max(np.abs(base["v_left"][times <= exc.duration])))
    first_echo = 2.0 * travel_time(model, exc.injection_cell, model.layers[0].start)
    for name in _variation_names(manifest):
        times, d = _times(manifest, f"{name}/difference_sensors.csv", dt)
        before = times < first_echo - CAUSAL_GUARD
        ratio = float(np.max(np.abs(d["dv_left"][before]))) / pulse_peak
        checks.append(_at_most(f"{name}: |dv| before first echo / pulse peak", ratio, 1e-9))
    return checks


def _fig2(bundle: RunBundle, manifest: Manifest, threads: Optional[int]) -> List[Check]:
    cfg = bundle.config
    model = bundle.model
    exc = cfg.excitation_spec()
    dt = cfg.grid.dt
    checks = []

    times, e = _times(manifest, "base/energy.csv", dt)
    plateau = _in_window(times, 1.2e-6 - 0.5 * dt, 12.08e-6 + 0.5 * dt)
    total = e["total"][plateau]
    checks.append(_at_most("energy: total drift 1.2-12.08 us (relative)", (total.max() - total.min()) / total.mean(), 1e-3))
    windows = interaction_windows(model, exc)
    energy = BalanceTrace(times=times, i_kin=e["kinetic"], i_pot=e["potential"])
    for r in self_interference_check(energy, windows, tolerance=0.01):
        checks.append(_at_most(f"energy: total / component excursion, {r.window.name}", r.ratio, 0.01))

    probes = cfg.recording.probe_cells[:3]
    _, p = _times(manifest, "base/probes.csv", dt)
    probe_v = np.column_stack([p[f"v_cell{c}"] for c in bundle.base.plan.probe_cells])
    record = replace(bundle.base, fields=replace(bundle.base.fields, probe_v=probe_v))
    coeff = measure_wave_coefficients(record, model, *probes)
    checks.append(_within("R_v magnitude at the first boundary", abs(coeff.r_v), 0.1, 0.002))
    checks.append(_within("R_v vs impedance contrast", coeff.r_v, coeff.r_v_expected, 0.002))
    checks.append(_within("T_v across both boundaries", coeff.t_v, coeff.t_v_expected, 0.01))
    checks.append(_within("R_E + T_E", coeff.r_e + coeff.t_e, 1.0, 0.01))
    times, sensors = _times(manifest, "base/sensors.csv", dt)
    for t_us in ECHO_TIMES_US:
        onset = _onset(sensors["v_left"], times, (t_us - 0.5) * 1e-6, (t_us + 1.5) * 1e-6)
        checks.append(_within(f"echo arrival near {t_us} us", onset * 1e6, t_us, 0.5))

    names = _variation_names(manifest)
    summaries = {name: _summary(manifest, name) for name in names}
    for name, s in summaries.items():
        ok = s["min_i_density"] >= -1e-12 * s["max_i_density"]
        checks.append(Check(f"{name}: min I_P", s["min_i_density"], f">= -1e-12 * {s['max_i_density']:.3g}", ok))
        if "q_f_ratio" in s:
            checks.append(_at_most(f"{name}: max |q_f| / max |active sources|", s["q_f_ratio"], 1e-9))
        if "form_deviation" in s:
            checks.append(_at_most(f"{name}: lambda-form vs rho-form density", s["form_deviation"], 1e-10))
        if "residual" in s:
            checks.append(_at_most(f"{name}: normalized balance residual", s["residual"], cfg.analysis.residual_threshold))

    if "residual" in summaries.get("density", {}):
        with tempfile.TemporaryDirectory() as tmp:
            _run(coarsened(cfg, 2, keep=("density",)), "balance", Path(tmp), threads)
            coarse = _summary(Manifest.load(tmp), "density")
        ratio = coarse["residual"] / summaries["density"]["residual"]
        checks.append(_at_least("density: residual shrink under dx, dt halving", ratio, 3.0))

    if "position" in names:
        trace = _trace(manifest, "position", dt)
        for w in windows:
            gain = _value_at(trace.i_total, trace.times, w.end) - _value_at(trace.i_total, trace.times, w.start)
            checks.append(_at_least(f"position: information gain over {w.name}", gain, 0.0))
        left = _stride_integral(trace.source_traces["left"], trace.times, dt)
        right = _stride_integral(trace.source_traces["right"], trace.times, dt)
        checks.append(_within("position: left share of the source (%)", 100.0 * left / (left + right), 70.0, 5.0))
        for r in self_interference_check(trace, windows):
            checks.append(
                Check(f"position: total / component excursion, {r.window.name}", r.ratio, f"< {r.tolerance:.3g}, anti-phase", r.passed)
            )
        _, dv = _times(manifest, "position/difference_sensors.csv", dt)
        ratio = _max_abs(dv["dv_right"]) / _max_abs(dv["dv_left"])
        checks.append(_at_most("position: transmitted / reflected difference amplitude", ratio, 0.03))

    if "thickness" in names and len(windows) == 3:
        trace = _trace(manifest, "thickness", dt)
        second = _value_at(trace.i_total, trace.times, 0.5 * (windows[1].end + windows[2].start))
        third = _value_at(trace.i_total, trace.times, windows[2].end + 0.25e-6)
        checks.append(Check("thickness: third plateau below second", third - second, "< 0", bool(third < second)))

    if "density" in names:
        trace = _trace(manifest, "density", dt)
        sink = _stride_integral(trace.source_traces["right"], trace.times, dt)
        checks.append(Check("density: right-boundary source integral", sink, "< 0", bool(sink < 0)))

    checks.extend(_causal_checks(bundle, manifest))
    return checks


def _fig3(bundle: RunBundle, manifest: Manifest, threads: Optional[int]) -> List[Check]:
    dv = _columns(manifest, "position/difference_sensors.csv")
    ratio = _max_abs(dv["dv_right"]) / _max_abs(dv["dv_left"])
    checks = [_at_least("position: transmitted / reflected difference amplitude", ratio, 0.3)]
    right = float(np.max(_columns(manifest, "position/sensor_info.csv")["info_right"]))
    checks.append(Check("position: transmitted-side information peak", right, "> 0", bool(right > 0)))
    return checks


def _fig9(bundle: RunBundle, manifest: Manifest, threads: Optional[int]) -> List[Check]:
    cfg = bundle.config
    deltas, values = [], []
    for name in _variation_names(manifest):
        deltas.append(float(manifest.entries[f"{name}/difference_sensors.csv"]["parameters"]["delta"]))
        snapshot = _columns(manifest, f"{name}/difference_snapshot_t{CONVERGENCE_TIME_US:.4f}us.csv")
        values.append(snapshot["dv_dp"])
    conv = deviation_report(deltas, values, threshold=cfg.analysis.convergence_threshold, quantity="dv_dp")
    checks = [_at_most(f"dv/dP deviation at delta {d / cfg.grid.dx:.0f} dx", dev, 0.05) for d, dev in zip(conv.deltas, conv.deviations)]
    checks.append(Check("deviation grows with delta", conv.max_deviation(), "monotonic", conv.monotonic))
    return checks


def _homogeneous(bundle: RunBundle, manifest: Manifest, threads: Optional[int]) -> List[Check]:
    checks = []
    for name in _variation_names(manifest):
        dv = _columns(manifest, f"{name}/difference_sensors.csv")
        arrays = [dv["dv_left"], dv["dv_right"]]
        for path in manifest.find(".csv"):
            if path.startswith(f"{name}/difference_snapshot_"):
                snapshot = _columns(manifest, path)
                arrays += [snapshot["dv"], snapshot["dT"]]
        worst = _max_abs(*arrays)
        checks.append(Check(f"{name}: max |differential field|", worst, "== 0", worst == 0.0))
        if f"{name}/balance_summary.csv" in manifest.entries:
            peak = _summary(manifest, name)["max_i_density"]
            checks.append(Check(f"{name}: max I_P", peak, "== 0", peak == 0.0))
        info = _columns(manifest, f"{name}/sensor_info.csv")
        top = max(float(np.max(info["info_left"])), float(np.max(info["info_right"])))
        checks.append(Check(f"{name}: max sensor information", top, "== 0", top == 0.0))
    return checks


def _fig24(bundle: RunBundle, manifest: Manifest, threads: Optional[int]) -> List[Check]:
    rows = {(r["example"], r["boundary"]): r for r in manifest.read_csv("cbit_report.csv")}
    checks = []
    for key, (integral, percent) in CBIT_TABLE.items():
        row = rows[key]
        label = "/".join(key)
        checks.append(_within(f"{label}: integral (Cbit/m)", float(row["integral_cbits_per_m"]), integral, 0.1, relative=True, primary=False))
        if percent is not None:
            checks.append(_within(f"{label}: split (%)", float(row["percent"]), percent, 2.0))
    for key, peak in CBIT_PEAKS.items():
        checks.append(_within(f"{'/'.join(key)}: peak (Cbit/m)", float(rows[key]["peak_cbits_per_m"]), peak, 0.1, relative=True, primary=False))

    totals: Dict[str, float] = {"reflection": 0.0, "transmission": 0.0}
    per_example: Dict[str, float] = {}
    for (example, boundary), row in rows.items():
        value = float(row["integral_cbits_per_m"])
        totals["reflection" if boundary == "left" else "transmission"] += value
        per_example[example] = per_example.get(example, 0.0) + value
    for name, expected in CBIT_TOTALS.items():
        checks.append(_within(f"total {name} (Cbit/m)", totals[name], expected, 0.1, relative=True, primary=False))
    for name, expected in CBIT_MULTIPLIERS.items():
        checks.append(_within(f"{name} vs density", per_example[name] / per_example["density"], expected, 0.15, relative=True))

    with tempfile.TemporaryDirectory() as tmp:
        coarse = coarsened(bundle.config, 2)
        coarse.analysis.integral_anchor = None
        _run(coarse, "cbit", Path(tmp) / "unit", threads)
        unit = _integrals(Manifest.load(Path(tmp) / "unit"))
        coarse.excitation.amplitude *= 3.0
        _run(coarse, "cbit", Path(tmp) / "scaled", threads)
        scaled = _integrals(Manifest.load(Path(tmp) / "scaled"))
    checks.append(_at_most("Cbit integrals under 3x excitation (relative change)", amplitude_change(unit, scaled), 1e-6))
    return checks


CHECKS: Dict[str, Callable[[RunBundle, Manifest, Optional[int]], List[Check]]] = {
    "fig2": _fig2,
    "fig3": _fig3,
    "fig9": _fig9,
    "homogeneous": _homogeneous,
    "fig24": _fig24,
}

STAGE_FOR = {"fig2": "cbit", "fig3": "cbit", "fig9": "diff", "homogeneous": "cbit", "fig24": "cbit"}


def verify(preset: str, out_dir: Optional[str] = None, threads: Optional[int] = None) -> VerificationReport:
    if preset not in CHECKS:
        raise ConfigError(f"no acceptance checks for preset '{preset}', use one of {sorted(CHECKS)}")
    cfg = load_preset(preset)
    out = Path(out_dir or Path(cfg.output.directory) / "verify")
    logger.info(f"Verifying preset '{preset}' into {out}")
    bundle = _run(cfg, STAGE_FOR[preset], out, threads)

    manifest = Manifest.load(out)
    bad = manifest.verify()
    listed = len(manifest.entries)
    report = VerificationReport(preset=preset)
    report.checks.append(Check("artefacts matching their manifest checksum", listed - len(bad), f"{listed}", not bad))
    if not bad:
        report.checks.extend(CHECKS[preset](bundle, manifest, threads))
    for c in report.checks:
        if not c.passed:
            log = logger.error if c.primary else logger.warning
            log(f"{preset}: {c.name} = {c.measured:.6g}, expected {c.expected}")
    return report

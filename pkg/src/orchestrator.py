import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from loguru import logger

from balance import (
    LAMBDA_FORM,
    RHO_FORM,
    balance_residual,
    balance_trace,
    excitation_energy,
    info_density,
    info_fields,
    interface_mask,
)
from cbit import EXAMPLES, SENSOR_WINDOWS, cbit_integral, report, sensor_info
from config import RunConfig
from data_model import (
    BalanceTrace,
    CbitReport,
    DifferentialField,
    EnergyHistory,
    FieldSet,
    InfoFields,
    MaterialField,
    ParameterSpec,
    SimulationRecord,
    ValidityCase,
    VariationPair,
)
from difffield import difference_field, differential_field
from manifest import Manifest
from model import build_layered_model, classify_parameter, material_derivative, variation_pair
from solver import energy_in_model, run
from writers import WRITERS, Table

STAGES = ("simulate", "diff", "balance", "cbit")


class OrchestrationError(Exception):
    """Custom exception wrapping module errors with the run they came from."""

    pass


@dataclass(slots=True)
class VariationResult:
    spec: ParameterSpec
    case: ValidityCase
    reference_model: MaterialField
    base: SimulationRecord
    dfield: DifferentialField
    e_f: float = 0.0
    form: str = LAMBDA_FORM
    trace: Optional[BalanceTrace] = None
    info: Optional[InfoFields] = None
    sensors: Dict[str, object] = field(default_factory=dict)
    summary: Dict[str, float] = field(default_factory=dict)


@dataclass(slots=True)
class RunBundle:
    config: RunConfig
    out_dir: Path
    model: MaterialField
    base: SimulationRecord
    energy: Optional[EnergyHistory] = None
    variations: Dict[str, VariationResult] = field(default_factory=dict)
    cbit: Optional[CbitReport] = None
    files: List[str] = field(default_factory=list)
    simulations: int = 0


def _fingerprint(model: MaterialField) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(model.rho).tobytes())
    h.update(np.ascontiguousarray(model.stiffness).tobytes())
    return h.hexdigest()


def _slim(fields: FieldSet, rows: np.ndarray) -> FieldSet:
    """Keep sensors and probes, and only the listed snapshot rows."""
    return replace(
        fields,
        snapshot_v=fields.snapshot_v[rows],
        snapshot_T=fields.snapshot_T[rows],
        snapshot_T_prev=fields.snapshot_T_prev[rows],
    )


def stride_block(info: InfoFields, dt: float) -> InfoFields:
    """The longest run of consecutive-step snapshots in an information field."""
    steps = np.rint(info.times / dt).astype(int)
    best, start = (0, min(1, steps.size)), 0
    for i in range(1, steps.size + 1):
        if i == steps.size or steps[i] != steps[i - 1] + 1:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = i
    lo, hi = best
    return replace(
        info,
        times=info.times[lo:hi],
        i_kin=info.i_kin[lo:hi],
        i_pot=info.i_pot[lo:hi],
        i_flux=info.i_flux[lo:hi],
        sources={k: v[lo:hi] for k, v in info.sources.items()},
    )


class Orchestrator:
    """Runs the simulations of one configuration and writes every artefact.

    Stages build on each other: simulate (base run), diff (+/- pairs and
    differential fields), balance (information fields and traces) and cbit
    (sensor-side series and the report). manifest.json is written last.
    """

    def __init__(
        self,
        config: RunConfig,
        out_dir: Path,
        writers: list,
        threads: int = 1,
        stride: Optional[int] = None,
        keep_fields: bool = False,
    ):
        self.config = config
        self.out_dir = Path(out_dir)
        self.writers = writers
        self.threads = max(1, threads)
        self.stride = stride
        self.keep_fields = keep_fields
        self.manifest = Manifest(self.out_dir, run={"name": config.name})
        self._runs: Dict[str, SimulationRecord] = {}

    @classmethod
    def build(
        cls,
        config: RunConfig,
        out_dir: Optional[str] = None,
        threads: Optional[int] = None,
        stride: Optional[int] = None,
        normalization: Optional[str] = None,
        keep_fields: bool = False,
    ):
        if normalization is not None:
            config.analysis.normalization = normalization
        out = Path(out_dir or os.getenv("WAVEINFO_OUT_DIR") or config.output.directory)
        threads = threads or int(os.getenv("WAVEINFO_THREADS", "1"))
        writers = [WRITERS[fmt](out) for fmt in config.output.formats]
        return cls(config, out, writers, threads=threads, stride=stride, keep_fields=keep_fields)

    def run(self, stage: str = "cbit") -> RunBundle:
        if stage not in STAGES:
            raise OrchestrationError(f"unknown stage '{stage}', use one of {STAGES}")
        upto = STAGES.index(stage)
        logger.info(f"Run '{self.config.name}' up to stage '{stage}' with {self.threads} thread(s)")
        try:
            bundle = self._simulate()
            if upto >= 1:
                self._variations(bundle, with_balance=upto >= 2)
            if upto >= 3:
                self._cbit(bundle)
            self.manifest.save()
        except Exception as e:
            if isinstance(e, OrchestrationError):
                raise
            raise OrchestrationError(f"run '{self.config.name}' failed: {e}") from e
        bundle.files = sorted(self.manifest.entries)
        bundle.simulations = len(self._runs) + 2 * len(bundle.variations)
        logger.info(f"Run '{self.config.name}' done: {bundle.simulations} simulation(s), {len(bundle.files)} file(s)")
        return bundle

    # -- simulations -------------------------------------------------------

    def _simulate_model(self, model: MaterialField, label: str) -> SimulationRecord:
        cfg = self.config
        plan = cfg.recording_plan(self.stride)
        return run(model, cfg.grid_spec(), cfg.excitation_spec(), plan, label=f"{cfg.name}/{label}")

    def _base_run(self, model: MaterialField, label: str) -> SimulationRecord:
        key = _fingerprint(model)
        if key not in self._runs:
            self._runs[key] = self._simulate_model(model, label)
        return self._runs[key]

    def _simulate(self) -> RunBundle:
        cfg = self.config
        model = build_layered_model(cfg.grid_spec(), cfg.matrix_material(), cfg.layer_specs())
        base = self._base_run(model, "base")
        bundle = RunBundle(config=cfg, out_dir=self.out_dir, model=model, base=base)
        self._write("base/sensors", self._sensor_table(base), {"run": "base"})
        if base.plan.probe_cells:
            cells = [int(c) for c in base.plan.probe_cells]
            self._write("base/probes", self._probe_table(base), {"run": "base", "probe_cells": cells})
        if base.has_snapshots:
            bundle.energy = e = energy_in_model(base, model)
            rows = list(zip(e.times * 1e6, e.kinetic, e.potential, e.total))
            self._write("base/energy", Table(["time_us", "kinetic", "potential", "total"], rows), {"run": "base"})
            if cfg.output.snapshots:
                for t in cfg.recording.snapshot_times_us:
                    self._write_base_snapshot(base, model, t)
        return bundle

    def _variations(self, bundle: RunBundle, with_balance: bool) -> None:
        grid = self.config.grid_spec()
        pairs = [(spec, variation_pair(bundle.model, spec, grid)) for spec in self.config.parameter_specs()]
        for spec, pair in pairs:
            self._base_run(pair.reference, f"{spec.name}/reference")

        # one batch keeps at most `threads` +/- records in memory
        per_batch = max(1, self.threads // 2)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            for i in range(0, len(pairs), per_batch):
                batch = pairs[i : i + per_batch]
                futures = [
                    (
                        pool.submit(self._simulate_model, pair.model_plus, f"{spec.name}/+"),
                        pool.submit(self._simulate_model, pair.model_minus, f"{spec.name}/-"),
                    )
                    for spec, pair in batch
                ]
                for (spec, pair), (plus, minus) in zip(batch, futures):
                    dfield = differential_field(difference_field(plus.result(), minus.result(), spec))
                    bundle.variations[spec.name] = self._analyse(spec, pair, dfield, with_balance)

    def _analyse(
        self, spec: ParameterSpec, pair: VariationPair, dfield: DifferentialField, with_balance: bool
    ) -> VariationResult:
        result = VariationResult(
            spec=spec,
            case=classify_parameter(spec),
            reference_model=pair.reference,
            base=self._base_run(pair.reference, spec.name),
            dfield=dfield,
        )
        self._write_difference(result)
        if with_balance:
            self._balance(result, pair)
        if not self.keep_fields:
            rows = self._report_rows(dfield.snapshot_steps)
            result.dfield = replace(dfield, fields=_slim(dfield.fields, rows), snapshot_steps=dfield.snapshot_steps[rows])
            result.info = None
        return result

    # -- balance -------------------------------------------------------------

    def _energy(self, result: VariationResult) -> float:
        a = self.config.analysis
        time = a.energy_time_us * 1e-6 if a.energy_time_us is not None else None
        return excitation_energy(result.base, result.reference_model, a.energy_normalization, time)

    def _balance(self, result: VariationResult, pair: VariationPair) -> None:
        cfg = self.config
        spec = result.spec
        if not result.base.has_snapshots:
            logger.warning(f"{spec.name}: no snapshots recorded, skipping the information balance")
            return
        model = result.reference_model
        derivs = material_derivative(pair)
        result.e_f = self._energy(result)
        form = cfg.analysis.balance_form if result.case == ValidityCase.CASE2 else None
        info = info_fields(result.dfield, result.base, model, derivs, spec, cfg.excitation_spec(), result.e_f, form)
        result.info = info
        result.form = info.form
        result.trace = balance_trace(info, model)

        density = info.i_density
        summary = result.summary
        summary["e_f"] = result.e_f
        summary["max_i_density"] = float(np.max(density))
        summary["min_i_density"] = float(np.min(density))
        active = max((float(np.max(np.abs(v))) for k, v in info.sources.items() if k != "q_f"), default=0.0)
        if active > 0:
            summary["q_f_ratio"] = float(np.max(np.abs(info.sources["q_f"]))) / active
        if result.case == ValidityCase.CASE2:
            other = RHO_FORM if info.form == LAMBDA_FORM else LAMBDA_FORM
            kin, pot = info_density(result.dfield, result.base, model, derivs, spec, result.e_f, form=other)
            scale = max(float(np.max(np.abs(density))), 1e-300)
            summary["form_deviation"] = float(np.max(np.abs(kin + pot - density))) / scale
        block = stride_block(info, cfg.grid.dt)
        if block.times.size >= 3:
            residual = balance_residual(block, cfg.grid.dt, exclude=interface_mask(derivs))
            summary["residual"] = residual.normalized_max
            logger.info(f"{spec.name}: balance residual {residual.normalized_max:.3e} over {block.times.size} steps")
        else:
            logger.info(f"{spec.name}: fewer than three consecutive snapshots, no balance residual")

        self._write_trace(result)
        if cfg.output.snapshots:
            self._write_info_snapshots(result, info)
        self._write(
            f"{spec.name}/balance_summary",
            Table(["quantity", "value"], sorted(summary.items()), title=f"Information balance, {spec.name}"),
            {"variation": spec.name, "case": result.case.name, "form": result.form},
            summary=True,
        )

    # -- cbit ------------------------------------------------------------------

    def _cbit(self, bundle: RunBundle) -> None:
        cfg = self.config
        mode = cfg.analysis.normalization
        window = cfg.analysis_window()
        for name, result in bundle.variations.items():
            if mode == "absolute" and result.e_f <= 0:
                result.e_f = self._energy(result)
            result.sensors = sensor_info(
                result.dfield, result.reference_model, result.spec, result.e_f, mode, base=result.base, window=window
            )
            left, right = result.sensors["left"], result.sensors["right"]
            self._write(
                f"{name}/sensor_info",
                Table(["time_us", "info_left", "info_right"], list(zip(left.times * 1e6, left.series, right.series))),
                {"variation": name, "normalization": mode},
            )
            self._write_sensor_windows(name, result)

        if not all(name in bundle.variations for name in EXAMPLES):
            logger.info(f"Cbit report needs the examples {EXAMPLES}; wrote per-variation series only")
            return
        anchor = cfg.analysis.integral_anchor
        bundle.cbit = report(
            {name: bundle.variations[name].sensors for name in EXAMPLES},
            window=window,
            anchor=("position", "left", anchor) if anchor is not None else None,
        )
        self._write("cbit_report", self.cbit_table(bundle), {"normalization": mode, "factor": bundle.cbit.factor}, summary=True)

    def cbit_table(self, bundle: RunBundle) -> Table:
        cbit = bundle.cbit
        notes = [f"reporting factor {cbit.factor:.9g}: {cbit.factor_provenance}"]
        notes += [f"total {k}: {v:.9g}" for k, v in cbit.totals.items()]
        notes += [f"multiplier vs density, {k}: {v:.9g}" for k, v in cbit.multipliers.items()]
        return Table(
            list(cbit.rows[0].to_dict()),
            [list(r.to_dict().values()) for r in cbit.rows],
            title=f"Sensor-side information in Cbit/m ({self.config.analysis.normalization} normalization)",
            notes=notes,
        )

    # -- output ----------------------------------------------------------------

    def _write(self, name: str, table: Table, parameters: dict, summary: bool = False) -> None:
        for writer in self.writers:
            if writer.summaries_only and not summary:
                continue
            path = writer.write(name, table)
            self.manifest.add(path, {"config": self.config.name, **parameters})

    @staticmethod
    def _sensor_table(record: SimulationRecord) -> Table:
        f = record.fields
        return Table(["time_us", "v_left", "v_right"], list(zip(record.sensor_times * 1e6, f.sensor_left, f.sensor_right)))

    @staticmethod
    def _probe_table(record: SimulationRecord) -> Table:
        columns = ["time_us"] + [f"v_cell{c}" for c in record.plan.probe_cells]
        return Table(columns, [(t, *row) for t, row in zip(record.sensor_times * 1e6, record.fields.probe_v)])

    def _report_rows(self, snapshot_steps: np.ndarray) -> np.ndarray:
        grid = self.config.grid_spec()
        steps = {grid.step_at(t * 1e-6) for t in self.config.recording.snapshot_times_us}
        return np.array([i for i, k in enumerate(snapshot_steps) if int(k) in steps], dtype=int)

    def _cell_x(self) -> np.ndarray:
        return (np.arange(self.config.grid.n_cells) + 0.5) * self.config.grid.dx * 1e3

    def _write_base_snapshot(self, record: SimulationRecord, model: MaterialField, t_us: float) -> None:
        row = record.snapshot_index(t_us * 1e-6)
        f = record.fields
        v = 0.5 * (f.snapshot_v[row, 1:] + f.snapshot_v[row, :-1])
        T = 0.5 * (f.snapshot_T[row] + f.snapshot_T_prev[row])
        self._write(
            f"base/snapshot_t{t_us:.4f}us",
            Table(["x_mm", "v", "T"], list(zip(self._cell_x(), v, T))),
            {"run": "base", "time_us": t_us},
        )

    def _write_difference(self, result: VariationResult) -> None:
        spec = result.spec
        d = result.dfield
        f = d.fields
        two_delta = 2.0 * spec.delta
        params = {"variation": spec.name, "kind": spec.kind.value, "delta": spec.delta, "reference_value": spec.reference_value}
        rows = zip(
            d.grid.step_times() * 1e6,
            f.sensor_left * two_delta,
            f.sensor_right * two_delta,
            f.sensor_left,
            f.sensor_right,
        )
        self._write(
            f"{spec.name}/difference_sensors",
            Table(["time_us", "dv_left", "dv_right", "dv_dp_left", "dv_dp_right"], list(rows)),
            params,
        )
        if not self.config.output.snapshots or d.snapshot_steps.size == 0:
            return
        for t in self.config.recording.snapshot_times_us:
            row = int(np.argmin(np.abs(d.snapshot_times - t * 1e-6)))
            dv_dp = 0.5 * (d.dv_dP[row, 1:] + d.dv_dP[row, :-1])
            dT_dp = 0.5 * (d.dT_dP[row] + f.snapshot_T_prev[row])
            rows = zip(self._cell_x(), dv_dp * two_delta, dT_dp * two_delta, dv_dp, dT_dp)
            self._write(
                f"{spec.name}/difference_snapshot_t{t:.4f}us",
                Table(["x_mm", "dv", "dT", "dv_dp", "dT_dp"], list(rows)),
                {**params, "time_us": t},
            )

    def _write_info_snapshots(self, result: VariationResult, info: InfoFields) -> None:
        net = info.net_source()
        density = info.i_density
        for t in self.config.recording.snapshot_times_us:
            row = result.base.snapshot_index(t * 1e-6)
            flux = 0.5 * (info.i_flux[row, 1:] + info.i_flux[row, :-1])
            rows = zip(self._cell_x(), info.i_kin[row], info.i_pot[row], density[row], flux, net[row])
            self._write(
                f"{result.spec.name}/info_snapshot_t{t:.4f}us",
                Table(["x_mm", "i_kin", "i_pot", "i_density", "i_flux", "net_source"], list(rows)),
                {"variation": result.spec.name, "time_us": t},
            )

    def _write_trace(self, result: VariationResult) -> None:
        trace = result.trace
        names = sorted(trace.source_traces)
        columns = ["time_us", "i_kin", "i_pot", "i_total"] + [f"source_{n}" for n in names]
        data = [trace.times * 1e6, trace.i_kin, trace.i_pot, trace.i_total] + [trace.source_traces[n] for n in names]
        self._write(f"{result.spec.name}/info_trace", Table(columns, list(zip(*data))), {"variation": result.spec.name})

    def _write_sensor_windows(self, name: str, result: VariationResult) -> None:
        rows = []
        end = result.dfield.grid.end_time
        for window_name in self.config.analysis.sensor_windows:
            start, stop = SENSOR_WINDOWS[window_name]
            if stop > end:
                logger.info(f"sensor window '{window_name}' ends after the run, skipped")
                continue
            for boundary, series in result.sensors.items():
                rows.append((window_name, boundary, start * 1e6, stop * 1e6, cbit_integral(series, (start, stop))))
        if rows:
            self._write(
                f"{name}/sensor_windows",
                Table(["window", "boundary", "start_us", "end_us", "integral_raw"], rows),
                {"variation": name},
            )

"""TOML run configuration.

A run file has the tables [grid], [matrix], [[layers]], [excitation],
[[variations]], [recording], [output] and [analysis]. Times are given in
microseconds and lengths in metres unless the key says otherwise
(`*_us`, `*_mm`). Unknown keys are rejected.
"""

import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin

import tomli_w

from cbit import SENSOR_WINDOWS
from data_model import (
    Excitation,
    GridSpec,
    LayerSpec,
    Material,
    ParameterKind,
    ParameterSpec,
    RecordingPlan,
)

PRESETS_DIR = Path(__file__).parent / "presets"
CFL_TOLERANCE = 1e-9


class ConfigError(Exception):
    """Custom exception for invalid run configurations."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if field:
            location += f" [{field}]"
        if line is not None:
            location += f" (line {line})"
        super().__init__(f"{message}{location}")
        self.field = field
        self.line = line


@dataclass(slots=True)
class GridConfig:
    n_cells: int
    dx: float
    dt: float
    n_steps: Optional[int] = None
    end_time_us: Optional[float] = None


@dataclass(slots=True)
class MaterialConfig:
    rho: float
    c_p: float


@dataclass(slots=True)
class LayerConfig:
    x_start_mm: float
    x_end_mm: float
    rho: float
    c_p: float


@dataclass(slots=True)
class ExcitationConfig:
    center_frequency: float = 2.0e6
    n_cycles: int = 2
    amplitude: float = 1.0
    injection_cell: int = 0


@dataclass(slots=True)
class VariationConfig:
    kind: str
    reference_value: float
    delta: Optional[float] = None
    delta_cells: Optional[int] = None
    layer_index: int = 0
    boundary: Optional[str] = None
    label: str = ""


@dataclass(slots=True)
class RecordingConfig:
    snapshot_times_us: list = field(default_factory=list)
    snapshot_stride: int = 0
    stride_window_us: Optional[list] = None
    probe_cells: list = field(default_factory=list)


@dataclass(slots=True)
class OutputConfig:
    directory: str = "output"
    formats: list = field(default_factory=lambda: ["csv", "table"])
    snapshots: bool = True


@dataclass(slots=True)
class AnalysisConfig:
    normalization: str = "absolute"
    energy_normalization: str = "plateau"
    energy_time_us: Optional[float] = None
    window_us: list = field(default_factory=lambda: [0.0, 20.0])
    sensor_windows: list = field(default_factory=list)
    integral_anchor: Optional[float] = 102.41
    convergence_threshold: float = 0.01
    residual_threshold: float = 0.05
    balance_form: Optional[str] = None


@dataclass(slots=True)
class RunConfig:
    name: str
    grid: GridConfig
    matrix: MaterialConfig
    layers: list = field(default_factory=list)
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    variations: list = field(default_factory=list)
    recording: RecordingConfig = field(default_factory=RecordingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def grid_spec(self) -> GridSpec:
        return GridSpec(n_cells=self.grid.n_cells, dx=self.grid.dx, dt=self.grid.dt, n_steps=self.grid.n_steps)

    def matrix_material(self) -> Material:
        return Material(rho=self.matrix.rho, c_p=self.matrix.c_p)

    def layer_specs(self) -> list[LayerSpec]:
        return [
            LayerSpec(x_start=l.x_start_mm * 1e-3, x_end=l.x_end_mm * 1e-3, rho=l.rho, c_p=l.c_p) for l in self.layers
        ]

    def excitation_spec(self) -> Excitation:
        e = self.excitation
        return Excitation(
            center_frequency=e.center_frequency,
            n_cycles=e.n_cycles,
            amplitude=e.amplitude,
            injection_cell=e.injection_cell,
        )

    def parameter_specs(self) -> list[ParameterSpec]:
        return [
            ParameterSpec(
                kind=ParameterKind(v.kind),
                reference_value=v.reference_value,
                delta=v.delta,
                layer_index=v.layer_index,
                boundary=v.boundary,
                label=v.label,
            )
            for v in self.variations
        ]

    def recording_plan(self, stride: Optional[int] = None) -> RecordingPlan:
        r = self.recording
        window = tuple(t * 1e-6 for t in r.stride_window_us) if r.stride_window_us else None
        return RecordingPlan(
            snapshot_times=tuple(t * 1e-6 for t in r.snapshot_times_us),
            snapshot_stride=r.snapshot_stride if stride is None else stride,
            stride_window=window,
            probe_cells=tuple(r.probe_cells),
        )

    def analysis_window(self) -> tuple[float, float]:
        start, end = self.analysis.window_us
        return start * 1e-6, end * 1e-6


_SECTIONS = {
    "grid": GridConfig,
    "matrix": MaterialConfig,
    "excitation": ExcitationConfig,
    "recording": RecordingConfig,
    "output": OutputConfig,
    "analysis": AnalysisConfig,
}
_ARRAYS = {"layers": LayerConfig, "variations": VariationConfig}
_TOP_LEVEL = {"name"} | set(_SECTIONS) | set(_ARRAYS)

_NORMALIZATIONS = ("absolute", "relative")
_ENERGY_MODES = ("plateau", "peak")
_FORMATS = ("csv", "table")
_FORMS = ("lambda", "rho")


def _expected_type(cls, name: str):
    return cls.__annotations__[name]


def _base_type(annotation):
    """Strip Optional[...] down to the concrete type."""
    args = [a for a in get_args(annotation) if a is not type(None)]
    return args[0] if get_origin(annotation) is Union and args else annotation


def _coerce(value: Any, annotation, path: str):
    if value is None:
        return None
    kind = _base_type(annotation)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", field=path)
        return float(value)
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"expected an integer, got {value!r}", field=path)
    if kind is bool and not isinstance(value, bool):
        raise ConfigError(f"expected true/false, got {value!r}", field=path)
    if kind is str and not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", field=path)
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"expected an array, got {value!r}", field=path)
        return list(value)
    return value


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a table, got {data!r}", field=path)
    names = {f.name for f in fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key '{key}'", field=f"{path}.{key}")
    kwargs = {key: _coerce(value, _expected_type(cls, key), f"{path}.{key}") for key, value in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"missing required keys: {e}", field=path)


def _toml_line(e: tomllib.TOMLDecodeError) -> Optional[int]:
    match = re.search(r"line (\d+)", str(e))
    return int(match.group(1)) if match else None


def _numbers(values: list, path: str) -> list:
    out = []
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"expected a number, got {v!r}", field=f"{path}[{i}]")
        out.append(float(v))
    return out


def _resolve_grid(grid: GridConfig) -> None:
    if grid.n_cells < 2:
        raise ConfigError(f"need at least two cells, got {grid.n_cells}", field="grid.n_cells")
    if grid.dx <= 0:
        raise ConfigError("dx must be positive", field="grid.dx")
    if grid.dt <= 0:
        raise ConfigError("dt must be positive", field="grid.dt")
    if grid.n_steps is None and grid.end_time_us is None:
        raise ConfigError("give n_steps or end_time_us", field="grid")
    if grid.n_steps is None:
        grid.n_steps = int(round(grid.end_time_us * 1e-6 / grid.dt))
    if grid.n_steps < 1:
        raise ConfigError(f"n_steps must be at least 1, got {grid.n_steps}", field="grid.n_steps")
    if grid.end_time_us is not None and abs(grid.n_steps * grid.dt - grid.end_time_us * 1e-6) > 0.5 * grid.dt:
        raise ConfigError(
            f"end_time_us={grid.end_time_us} disagrees with n_steps*dt={grid.n_steps * grid.dt * 1e6:.6f} us",
            field="grid.end_time_us",
        )
    grid.end_time_us = None


def _resolve_variation(v: VariationConfig, i: int, cfg: RunConfig) -> None:
    path = f"variations[{i}]"
    try:
        kind = ParameterKind(v.kind)
    except ValueError:
        raise ConfigError(f"unknown kind '{v.kind}'", field=f"{path}.kind")
    if v.delta is None and v.delta_cells is None:
        raise ConfigError("give delta or delta_cells", field=path)
    if v.delta_cells is not None:
        if not kind.is_geometric:
            raise ConfigError("delta_cells only applies to geometric kinds", field=f"{path}.delta_cells")
        delta = v.delta_cells * cfg.grid.dx
        if v.delta is not None and abs(v.delta - delta) > 1e-9 * delta:
            raise ConfigError("delta and delta_cells disagree", field=path)
        v.delta = delta
        v.delta_cells = None
    if v.delta <= 0:
        raise ConfigError(f"delta must be positive, got {v.delta}", field=f"{path}.delta")
    if not 0 <= v.layer_index < max(1, len(cfg.layers)):
        raise ConfigError(f"layer_index {v.layer_index} out of range", field=f"{path}.layer_index")
    if kind == ParameterKind.BOUNDARY_POSITION and v.boundary not in ("left", "right"):
        raise ConfigError("boundary must be 'left' or 'right'", field=f"{path}.boundary")


def _fastest_speeds(cfg: RunConfig) -> list[tuple[str, float]]:
    """Every sound speed the runs will see, labelled by where it comes from."""
    speeds = [("matrix", cfg.matrix.c_p)]
    for i, layer in enumerate(cfg.layers):
        speeds.append((f"layers[{i}]", layer.c_p))
    for i, v in enumerate(cfg.variations):
        if ParameterKind(v.kind).is_geometric or not cfg.layers:
            continue
        layer = cfg.layers[v.layer_index]
        stiffness = layer.rho * layer.c_p**2
        top = v.reference_value + v.delta
        low = v.reference_value - v.delta
        kind = ParameterKind(v.kind)
        if kind in (ParameterKind.SOUND_SPEED_CONST_RHO, ParameterKind.SOUND_SPEED_CONST_STIFFNESS):
            c = top
        elif kind == ParameterKind.STIFFNESS_CONST_RHO:
            c = (top / layer.rho) ** 0.5
        elif kind == ParameterKind.DENSITY_CONST_STIFFNESS:
            c = (stiffness / max(low, 1e-30)) ** 0.5
        else:
            c = layer.c_p
        speeds.append((f"variations[{i}] on layers[{v.layer_index}]", c))
    return speeds


def _check_cfl(cfg: RunConfig) -> None:
    for where, c in _fastest_speeds(cfg):
        if c <= 0:
            raise ConfigError(f"sound speed must be positive, got {c}", field=where)
        limit = cfg.grid.dx / c
        if cfg.grid.dt > limit * (1.0 + CFL_TOLERANCE):
            raise ConfigError(
                f"CFL violated by {where} (c_p = {c:.3f} m/s): dt = {cfg.grid.dt:.6e} s > dx/c_p = {limit:.6e} s",
                field="grid.dt",
            )


def _validate(cfg: RunConfig) -> None:
    _resolve_grid(cfg.grid)
    if cfg.matrix.rho <= 0 or cfg.matrix.c_p <= 0:
        raise ConfigError("matrix material must be positive", field="matrix")
    length_mm = cfg.grid.n_cells * cfg.grid.dx * 1e3
    for i, layer in enumerate(cfg.layers):
        if layer.rho <= 0 or layer.c_p <= 0:
            raise ConfigError("layer material must be positive", field=f"layers[{i}]")
        if not 0 <= layer.x_start_mm < layer.x_end_mm <= length_mm + 0.5 * cfg.grid.dx * 1e3:
            raise ConfigError(
                f"layer [{layer.x_start_mm}, {layer.x_end_mm}] mm not inside [0, {length_mm:.6f}] mm",
                field=f"layers[{i}]",
            )
    for i, v in enumerate(cfg.variations):
        _resolve_variation(v, i, cfg)
    if not 0 <= cfg.excitation.injection_cell <= cfg.grid.n_cells:
        raise ConfigError("injection_cell out of range", field="excitation.injection_cell")
    if cfg.excitation.center_frequency <= 0 or cfg.excitation.n_cycles < 1:
        raise ConfigError("excitation needs a positive frequency and at least one cycle", field="excitation")

    rec = cfg.recording
    rec.snapshot_times_us = _numbers(rec.snapshot_times_us, "recording.snapshot_times_us")
    if rec.snapshot_stride < 0:
        raise ConfigError("snapshot_stride must be >= 0", field="recording.snapshot_stride")
    if rec.stride_window_us is not None:
        rec.stride_window_us = _numbers(rec.stride_window_us, "recording.stride_window_us")
        if len(rec.stride_window_us) != 2 or rec.stride_window_us[0] > rec.stride_window_us[1]:
            raise ConfigError("stride_window_us must be [start, end]", field="recording.stride_window_us")
    for i, cell in enumerate(rec.probe_cells):
        if isinstance(cell, bool) or not isinstance(cell, int) or not 0 <= cell < cfg.grid.n_cells:
            raise ConfigError(f"probe cell {cell!r} out of range", field=f"recording.probe_cells[{i}]")

    for fmt in cfg.output.formats:
        if fmt not in _FORMATS:
            raise ConfigError(f"unknown format '{fmt}', use {_FORMATS}", field="output.formats")

    a = cfg.analysis
    if a.normalization not in _NORMALIZATIONS:
        raise ConfigError(f"use one of {_NORMALIZATIONS}", field="analysis.normalization")
    if a.energy_normalization not in _ENERGY_MODES:
        raise ConfigError(f"use one of {_ENERGY_MODES}", field="analysis.energy_normalization")
    if a.balance_form is not None and a.balance_form not in _FORMS:
        raise ConfigError(f"use one of {_FORMS}", field="analysis.balance_form")
    a.window_us = _numbers(a.window_us, "analysis.window_us")
    if len(a.window_us) != 2 or a.window_us[0] >= a.window_us[1]:
        raise ConfigError("window_us must be [start, end]", field="analysis.window_us")
    for i, name in enumerate(a.sensor_windows):
        if not isinstance(name, str):
            raise ConfigError(f"expected a window name, got {name!r}", field=f"analysis.sensor_windows[{i}]")
        if name not in SENSOR_WINDOWS:
            raise ConfigError(
                f"unknown window {name!r}, use one of {sorted(SENSOR_WINDOWS)}", field=f"analysis.sensor_windows[{i}]"
            )

    _check_cfl(cfg)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{source}: malformed TOML: {e}", line=_toml_line(e))

    for key in data:
        if key not in _TOP_LEVEL:
            raise ConfigError(f"{source}: unknown key '{key}'", field=key)
    for key in ("grid", "matrix"):
        if key not in data:
            raise ConfigError(f"{source}: missing [{key}] table", field=key)

    name = data.get("name", Path(source).stem if source != "<string>" else "run")
    if not isinstance(name, str):
        raise ConfigError("expected a string", field="name")
    sections = {key: _build(cls, data[key], key) for key, cls in _SECTIONS.items() if key in data}
    arrays = {}
    for key, cls in _ARRAYS.items():
        items = data.get(key, [])
        if not isinstance(items, list):
            raise ConfigError("expected an array of tables", field=key)
        arrays[key] = [_build(cls, item, f"{key}[{i}]") for i, item in enumerate(items)]

    cfg = RunConfig(name=name, **sections, **arrays)
    _validate(cfg)
    return cfg


def _strip_none(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _strip_none(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_strip_none(v) for v in value]
    return value


def serialize_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(_strip_none(asdict(cfg)))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}")
    return parse_config(text, source=str(path))


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESETS_DIR.glob("*.toml"))


def load_preset(name: str) -> RunConfig:
    path = PRESETS_DIR / f"{name}.toml"
    if not path.exists():
        raise ConfigError(f"unknown preset '{name}', available: {', '.join(preset_names())}")
    return load_config(path)

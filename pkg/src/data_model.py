from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np


class ParameterKind(str, Enum):
    LAYER_POSITION = "layer_position"
    LAYER_THICKNESS = "layer_thickness"
    BOUNDARY_POSITION = "boundary_position"
    SOUND_SPEED_CONST_RHO = "sound_speed_const_rho"
    STIFFNESS_CONST_RHO = "stiffness_const_rho"
    DENSITY_CONST_CP = "density_const_cp"
    STIFFNESS_CONST_CP = "stiffness_const_cp"
    DENSITY_CONST_STIFFNESS = "density_const_stiffness"
    SOUND_SPEED_CONST_STIFFNESS = "sound_speed_const_stiffness"
    # independent change of two material quantities, never valid
    DENSITY_AND_SOUND_SPEED = "density_and_sound_speed"
    DENSITY_AND_STIFFNESS = "density_and_stiffness"
    SOUND_SPEED_AND_STIFFNESS = "sound_speed_and_stiffness"

    @property
    def is_geometric(self) -> bool:
        return self in GEOMETRIC_KINDS


class ValidityCase(int, Enum):
    CASE0 = 0
    CASE1 = 1
    CASE2 = 2
    CASE3 = 3


class Sign(int, Enum):
    PLUS = 1
    MINUS = -1


GEOMETRIC_KINDS = frozenset(
    {
        ParameterKind.LAYER_POSITION,
        ParameterKind.LAYER_THICKNESS,
        ParameterKind.BOUNDARY_POSITION,
    }
)

VALIDITY_BY_KIND: Dict[ParameterKind, ValidityCase] = {
    ParameterKind.LAYER_POSITION: ValidityCase.CASE0,
    ParameterKind.LAYER_THICKNESS: ValidityCase.CASE0,
    ParameterKind.BOUNDARY_POSITION: ValidityCase.CASE0,
    ParameterKind.SOUND_SPEED_CONST_RHO: ValidityCase.CASE1,
    ParameterKind.STIFFNESS_CONST_RHO: ValidityCase.CASE1,
    ParameterKind.DENSITY_CONST_CP: ValidityCase.CASE2,
    ParameterKind.STIFFNESS_CONST_CP: ValidityCase.CASE2,
    ParameterKind.DENSITY_CONST_STIFFNESS: ValidityCase.CASE3,
    ParameterKind.SOUND_SPEED_CONST_STIFFNESS: ValidityCase.CASE3,
}


@dataclass(slots=True, frozen=True)
class GridSpec:
    n_cells: int
    dx: float
    dt: float
    n_steps: int

    @property
    def length(self) -> float:
        return self.n_cells * self.dx

    @property
    def end_time(self) -> float:
        return self.n_steps * self.dt

    def step_times(self) -> np.ndarray:
        """Times of the states produced by steps 1..n_steps."""
        return np.arange(1, self.n_steps + 1) * self.dt

    def step_at(self, t: float) -> int:
        """Step index (1-based, clipped) whose velocity time is closest to t."""
        return int(min(max(round(t / self.dt), 1), self.n_steps))


@dataclass(slots=True, frozen=True)
class Material:
    rho: float
    c_p: float

    @property
    def stiffness(self) -> float:
        return self.rho * self.c_p**2

    @property
    def impedance(self) -> float:
        return self.rho * self.c_p


@dataclass(slots=True, frozen=True)
class LayerSpec:
    x_start: float
    x_end: float
    rho: float
    c_p: float

    @property
    def material(self) -> Material:
        return Material(rho=self.rho, c_p=self.c_p)


@dataclass(slots=True, frozen=True)
class LayerCells:
    """A layer snapped to the grid: cells [start, end) carry its material."""

    start: int
    end: int
    rho: float
    stiffness: float
    touches_left: bool = False
    touches_right: bool = False

    @property
    def n_cells(self) -> int:
        return self.end - self.start

    @property
    def c_p(self) -> float:
        return (self.stiffness / self.rho) ** 0.5

    @property
    def center2(self) -> int:
        """Twice the centre position in cell units (integer, so it compares exactly)."""
        return self.start + self.end


@dataclass(slots=True, frozen=True)
class MaterialField:
    rho: np.ndarray
    stiffness: np.ndarray
    dx: float
    matrix: Material
    layers: Tuple[LayerCells, ...] = ()

    @property
    def n_cells(self) -> int:
        return int(self.rho.shape[0])

    @property
    def c_p(self) -> np.ndarray:
        return np.sqrt(self.stiffness / self.rho)

    @property
    def compliance(self) -> np.ndarray:
        return 1.0 / self.stiffness

    @property
    def node_rho(self) -> np.ndarray:
        """Density at the n_cells + 1 velocity nodes (mean of the adjacent cells)."""
        padded = np.concatenate(([self.rho[0]], self.rho, [self.rho[-1]]))
        return 0.5 * (padded[1:] + padded[:-1])

    @property
    def impedance(self) -> np.ndarray:
        return np.sqrt(self.rho * self.stiffness)


@dataclass(slots=True, frozen=True)
class ParameterSpec:
    kind: ParameterKind
    reference_value: float
    delta: float
    layer_index: int = 0
    boundary: Optional[str] = None  # "left" / "right", BOUNDARY_POSITION only
    label: str = ""

    @property
    def validity_case(self) -> Optional[ValidityCase]:
        return VALIDITY_BY_KIND.get(self.kind)

    @property
    def name(self) -> str:
        return self.label or self.kind.value


@dataclass(slots=True, frozen=True)
class VariationPair:
    model_plus: MaterialField
    model_minus: MaterialField
    spec: ParameterSpec
    reference: MaterialField


@dataclass(slots=True, frozen=True)
class MaterialDerivatives:
    """Per-cell derivatives of the material fields with respect to P."""

    d_rho: np.ndarray
    d_stiffness: np.ndarray
    d_compliance: np.ndarray
    d_rho_over_stiffness: np.ndarray
    reference: MaterialField
    spec: ParameterSpec

    @property
    def varied_cells(self) -> np.ndarray:
        return np.flatnonzero((self.d_rho != 0.0) | (self.d_stiffness != 0.0))


@dataclass(slots=True, frozen=True)
class Excitation:
    center_frequency: float
    n_cycles: int = 2
    amplitude: float = 1.0
    injection_cell: int = 0

    @property
    def duration(self) -> float:
        return self.n_cycles / self.center_frequency

    def scaled(self, k: float) -> "Excitation":
        return Excitation(
            center_frequency=self.center_frequency,
            n_cycles=self.n_cycles,
            amplitude=self.amplitude * k,
            injection_cell=self.injection_cell,
        )


@dataclass(slots=True)
class WaveState:
    """v on n_cells + 1 nodes at t = n*dt, T on n_cells cell centres at t = (n + 1/2)*dt."""

    v: np.ndarray
    T: np.ndarray
    step_index: int = 0


@dataclass(slots=True, frozen=True)
class RecordingPlan:
    snapshot_times: Tuple[float, ...] = ()
    snapshot_stride: int = 0
    stride_window: Optional[Tuple[float, float]] = None
    probe_cells: Tuple[int, ...] = ()

    def snapshot_steps(self, grid: GridSpec) -> np.ndarray:
        steps = {grid.step_at(t) for t in self.snapshot_times}
        if self.snapshot_stride > 0:
            start, end = self.stride_window or (0.0, grid.end_time)
            first = grid.step_at(start)
            last = grid.step_at(end)
            steps.update(range(first, last + 1, self.snapshot_stride))
        return np.array(sorted(steps), dtype=int)


@dataclass(slots=True)
class FieldSet:
    """Every array a run records; difference and differential fields reuse the layout."""

    sensor_left: np.ndarray
    sensor_right: np.ndarray
    snapshot_v: np.ndarray
    snapshot_T: np.ndarray
    snapshot_T_prev: np.ndarray
    probe_v: np.ndarray
    probe_T: np.ndarray

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.__slots__}

    def combine(self, other: "FieldSet", op) -> "FieldSet":
        return FieldSet(**{k: op(a, getattr(other, k)) for k, a in self.arrays().items()})

    def scaled(self, k: float) -> "FieldSet":
        return FieldSet(**{name: a * k for name, a in self.arrays().items()})


@dataclass(slots=True)
class SimulationRecord:
    grid: GridSpec
    excitation: Excitation
    plan: RecordingPlan
    fields: FieldSet
    snapshot_steps: np.ndarray
    force_scale: float
    boundaries: Tuple[str, str] = ("stress_free", "stress_free")

    @property
    def sensor_times(self) -> np.ndarray:
        return self.grid.step_times()

    @property
    def snapshot_times(self) -> np.ndarray:
        return self.snapshot_steps * self.grid.dt

    @property
    def has_snapshots(self) -> bool:
        return self.snapshot_steps.size > 0

    def snapshot_index(self, t: float) -> int:
        """Row of the snapshot closest to time t."""
        if not self.has_snapshots:
            raise IndexError("record holds no snapshots")
        return int(np.argmin(np.abs(self.snapshot_times - t)))


@dataclass(slots=True)
class DifferenceField:
    fields: FieldSet
    spec: ParameterSpec
    grid: GridSpec
    snapshot_steps: np.ndarray

    @property
    def dv(self) -> np.ndarray:
        return self.fields.snapshot_v

    @property
    def dT(self) -> np.ndarray:
        return self.fields.snapshot_T


@dataclass(slots=True)
class DifferentialField:
    fields: FieldSet
    spec: ParameterSpec
    grid: GridSpec
    snapshot_steps: np.ndarray

    @property
    def dv_dP(self) -> np.ndarray:
        return self.fields.snapshot_v

    @property
    def dT_dP(self) -> np.ndarray:
        return self.fields.snapshot_T

    @property
    def snapshot_times(self) -> np.ndarray:
        return self.snapshot_steps * self.grid.dt


@dataclass(slots=True)
class EnergyHistory:
    times: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.kinetic + self.potential


@dataclass(slots=True)
class EnergyFields:
    """Co-located on cells except the Poynting vector, which lives on the velocity nodes."""

    times: np.ndarray
    kin: np.ndarray
    pot: np.ndarray
    poynting: np.ndarray
    kin_source: np.ndarray


@dataclass(slots=True)
class InfoFields:
    times: np.ndarray
    i_kin: np.ndarray
    i_pot: np.ndarray
    i_flux: np.ndarray
    sources: Dict[str, np.ndarray]
    source_signs: Dict[str, float]
    spec: ParameterSpec
    e_f: float
    dx: float
    form: str = "lambda"

    @property
    def i_density(self) -> np.ndarray:
        return self.i_kin + self.i_pot

    def net_source(self) -> np.ndarray:
        """Signed right-hand side of the active balance equation."""
        total = np.zeros_like(self.i_kin)
        for name, sign in self.source_signs.items():
            total = total + sign * self.sources[name]
        return total


@dataclass(slots=True)
class BalanceTrace:
    times: np.ndarray
    i_kin: np.ndarray
    i_pot: np.ndarray
    source_traces: Dict[str, np.ndarray] = field(default_factory=dict)
    residual: Optional[np.ndarray] = None

    @property
    def i_total(self) -> np.ndarray:
        return self.i_kin + self.i_pot


@dataclass(slots=True)
class SensorInfoSeries:
    boundary: str
    times: np.ndarray
    series: np.ndarray
    spec: ParameterSpec
    normalization: str
    window: Optional[Tuple[float, float]] = None


@dataclass(slots=True)
class CbitRow:
    example: str
    boundary: str
    peak: float
    integral: float
    percent: float
    window_start_us: float
    window_end_us: float
    normalization_mode: str

    def to_dict(self) -> dict:
        return {
            "example": self.example,
            "boundary": self.boundary,
            "peak_cbits_per_m": self.peak,
            "integral_cbits_per_m": self.integral,
            "percent": self.percent,
            "window_start_us": self.window_start_us,
            "window_end_us": self.window_end_us,
            "normalization_mode": self.normalization_mode,
        }


@dataclass(slots=True)
class CbitReport:
    rows: list
    factor: float
    factor_provenance: str
    totals: Dict[str, float] = field(default_factory=dict)
    multipliers: Dict[str, float] = field(default_factory=dict)

    def row(self, example: str, boundary: str) -> CbitRow:
        for r in self.rows:
            if r.example == example and r.boundary == boundary:
                return r
        raise KeyError(f"no row for {example}/{boundary}")

import operator
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from loguru import logger

from data_model import DifferenceField, DifferentialField, ParameterSpec, SimulationRecord


class RecordMismatchError(Exception):
    """Custom exception for records that cannot be combined."""

    pass


@dataclass(slots=True)
class ConvergenceReport:
    deltas: list
    deviations: list  # deviation of each field from the smallest-delta one
    threshold: float

    @property
    def monotonic(self) -> bool:
        return all(b >= a for a, b in zip(self.deviations[1:], self.deviations[2:]))

    def max_deviation(self) -> float:
        return max(self.deviations) if self.deviations else 0.0


def _check_compatible(rec_plus: SimulationRecord, rec_minus: SimulationRecord) -> None:
    if rec_plus.grid != rec_minus.grid:
        raise RecordMismatchError(f"grids differ: {rec_plus.grid} vs {rec_minus.grid}")
    if rec_plus.excitation != rec_minus.excitation:
        raise RecordMismatchError("excitations differ between the two runs")
    if not np.array_equal(rec_plus.snapshot_steps, rec_minus.snapshot_steps):
        raise RecordMismatchError("recording plans differ between the two runs")
    for name, a in rec_plus.fields.arrays().items():
        b = getattr(rec_minus.fields, name)
        if a.shape != b.shape:
            raise RecordMismatchError(f"{name}: shape {a.shape} vs {b.shape}")


def difference_field(rec_plus: SimulationRecord, rec_minus: SimulationRecord, spec: ParameterSpec) -> DifferenceField:
    _check_compatible(rec_plus, rec_minus)
    fields = rec_plus.fields.combine(rec_minus.fields, operator.sub)
    logger.debug(f"{spec.name}: max |dv| at left sensor {np.max(np.abs(fields.sensor_left)):.3e}")
    return DifferenceField(fields=fields, spec=spec, grid=rec_plus.grid, snapshot_steps=rec_plus.snapshot_steps)


def differential_field(diff: DifferenceField) -> DifferentialField:
    if diff.spec.delta <= 0:
        raise RecordMismatchError(f"delta must be positive, got {diff.spec.delta}")
    return DifferentialField(
        fields=diff.fields.scaled(1.0 / (2.0 * diff.spec.delta)),
        spec=diff.spec,
        grid=diff.grid,
        snapshot_steps=diff.snapshot_steps,
    )


def _quantity(field: DifferentialField, quantity: str, time: Optional[float]) -> np.ndarray:
    values = getattr(field.fields, quantity)
    if time is not None and quantity.startswith("snapshot"):
        row = int(np.argmin(np.abs(field.snapshot_times - time)))
        return values[row]
    return values


def convergence_report(
    fields: Sequence[DifferentialField],
    threshold: float = 0.01,
    quantity: str = "snapshot_v",
    time: Optional[float] = None,
) -> ConvergenceReport:
    """Masked relative deviation of each differential field from the smallest-delta one."""
    if len(fields) < 2:
        raise RecordMismatchError("convergence needs at least two differential fields")
    kinds = {f.spec.kind for f in fields}
    if len(kinds) > 1:
        raise RecordMismatchError(f"mismatched parameter kinds: {sorted(k.value for k in kinds)}")

    ordered = sorted(fields, key=lambda f: f.spec.delta)
    values = [_quantity(f, quantity, time) for f in ordered]
    return deviation_report([f.spec.delta for f in ordered], values, threshold, quantity)


def deviation_report(
    deltas: Sequence[float],
    values: Sequence[np.ndarray],
    threshold: float = 0.01,
    quantity: str = "field",
) -> ConvergenceReport:
    """Deviation of each array from the one with the smallest delta.

    Points below `threshold` times the reference maximum are masked out.
    """
    if len(deltas) != len(values) or len(deltas) < 2:
        raise RecordMismatchError("convergence needs at least two fields, one delta each")
    order = sorted(range(len(deltas)), key=lambda i: deltas[i])
    reference = values[order[0]]
    mask = np.abs(reference) > threshold * np.max(np.abs(reference))
    deviations = []
    for i in order:
        if values[i].shape != reference.shape:
            raise RecordMismatchError(f"{quantity}: shape {values[i].shape} vs {reference.shape}")
        if not mask.any():
            deviations.append(0.0)
            continue
        rel = np.abs(values[i][mask] - reference[mask]) / np.abs(reference[mask])
        deviations.append(float(np.max(rel)))
    return ConvergenceReport(deltas=[deltas[i] for i in order], deviations=deviations, threshold=threshold)

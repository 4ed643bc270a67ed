"""Layered 1D media and their perturbed model pairs.

A model is a per-cell density and stiffness (lambda + 2 mu) profile. Layers
are snapped to cell boundaries; each parameter variation produces a plus and
a minus model around a reference, from which the per-cell material
derivatives with respect to the varied parameter P are taken.
"""

from dataclasses import replace
from typing import Optional, Sequence

import numpy as np
from loguru import logger

from data_model import (
    GridSpec,
    LayerCells,
    LayerSpec,
    Material,
    MaterialDerivatives,
    MaterialField,
    ParameterSpec,
    Sign,
    ValidityCase,
    VariationPair,
)


class ModelError(Exception):
    """Custom exception for invalid models and variations."""

    pass


class UnsupportedParameterCombination(ModelError):
    """Raised for independent simultaneous changes of two material quantities."""

    pass


SNAP_WARN_FRACTION = 0.01
CFL_TOLERANCE = 1e-9


def _snap(x: float, dx: float, what: str) -> int:
    k = x / dx
    index = int(round(k))
    if abs(k - index) > SNAP_WARN_FRACTION:
        logger.warning(
            f"{what} at {x * 1e3:.6f} mm snapped by {abs(k - index) * dx * 1e6:.4f} um to cell boundary {index}"
        )
    return index


def fill_layers(n_cells: int, matrix: Material, layers: Sequence[LayerCells]) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell density and stiffness arrays for a matrix with embedded layers."""
    rho = np.full(n_cells, matrix.rho, dtype=float)
    stiffness = np.full(n_cells, matrix.stiffness, dtype=float)
    for layer in layers:
        rho[layer.start : layer.end] = layer.rho
        stiffness[layer.start : layer.end] = layer.stiffness
    return rho, stiffness


def with_layers(base: MaterialField, layers: Sequence[LayerCells]) -> MaterialField:
    rho, stiffness = fill_layers(base.n_cells, base.matrix, layers)
    return _freeze(rho, stiffness, base.dx, base.matrix, tuple(layers))


def _freeze(rho, stiffness, dx, matrix, layers) -> MaterialField:
    rho.flags.writeable = False
    stiffness.flags.writeable = False
    return MaterialField(rho=rho, stiffness=stiffness, dx=dx, matrix=matrix, layers=layers)


def build_layered_model(grid: GridSpec, matrix: Material, layers: Sequence[LayerSpec]) -> MaterialField:
    if grid.n_cells < 2 or grid.dx <= 0 or grid.dt <= 0 or grid.n_steps < 1:
        raise ModelError(f"Invalid grid: {grid}")
    if matrix.rho <= 0 or matrix.c_p <= 0:
        raise ModelError(f"Matrix material must be strictly positive, got rho={matrix.rho}, c_p={matrix.c_p}")

    snapped: list[LayerCells] = []
    for i, layer in enumerate(layers):
        if layer.rho <= 0 or layer.c_p <= 0:
            raise ModelError(f"layers[{i}] has non-positive material values rho={layer.rho}, c_p={layer.c_p}")
        if layer.x_start >= layer.x_end:
            raise ModelError(f"layers[{i}] is empty: x_start={layer.x_start} >= x_end={layer.x_end}")
        start = _snap(layer.x_start, grid.dx, f"layers[{i}] start")
        end = _snap(layer.x_end, grid.dx, f"layers[{i}] end")
        if start < 0 or end > grid.n_cells:
            raise ModelError(
                f"layers[{i}] [{layer.x_start * 1e3:.4f}, {layer.x_end * 1e3:.4f}] mm lies outside the grid "
                f"[0, {grid.length * 1e3:.4f}] mm"
            )
        if start >= end:
            raise ModelError(f"layers[{i}] covers no cell after snapping to dx={grid.dx}")
        snapped.append(
            LayerCells(
                start=start,
                end=end,
                rho=layer.rho,
                stiffness=layer.material.stiffness,
                touches_left=start == 0,
                touches_right=end == grid.n_cells,
            )
        )

    ordered = sorted(snapped, key=lambda c: c.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise ModelError(f"Overlapping layers: cells [{a.start}, {a.end}) and [{b.start}, {b.end})")

    rho, stiffness = fill_layers(grid.n_cells, matrix, snapped)
    logger.debug(f"Built model with {len(snapped)} layer(s) on {grid.n_cells} cells")
    return _freeze(rho, stiffness, grid.dx, matrix, tuple(snapped))


def check_cfl(model: MaterialField, grid: GridSpec, label: str = "model") -> None:
    c_max = float(np.max(model.c_p))
    limit = grid.dx / c_max
    if grid.dt > limit * (1.0 + CFL_TOLERANCE):
        cell = int(np.argmax(model.c_p))
        raise ModelError(
            f"CFL violated in {label}: dt={grid.dt:.6e} s exceeds dx/c_max={limit:.6e} s "
            f"(c_p={c_max:.3f} m/s at cell {cell})"
        )


def classify_parameter(spec: ParameterSpec) -> ValidityCase:
    case = spec.validity_case
    if case is None:
        raise UnsupportedParameterCombination(
            f"{spec.kind.value} varies two material quantities independently; "
            "the information balance is not valid for it"
        )
    return case


def _variation_for(spec: ParameterSpec):
    from variations import GeometricVariation, MaterialVariation

    for variation in (GeometricVariation(), MaterialVariation()):
        if variation.handles(spec):
            return variation
    raise ModelError(f"No variation handles {spec.kind.value}")


def apply_variation(base: MaterialField, spec: ParameterSpec, sign: Sign) -> MaterialField:
    classify_parameter(spec)
    if spec.delta == 0:
        return base
    if spec.delta < 0:
        raise ModelError(f"delta must be positive, got {spec.delta}")
    return _variation_for(spec).apply(base, spec, Sign(sign))


def reference_model(base: MaterialField, spec: ParameterSpec) -> MaterialField:
    classify_parameter(spec)
    return _variation_for(spec).reference(base, spec)


def variation_pair(base: MaterialField, spec: ParameterSpec, grid: Optional[GridSpec] = None) -> VariationPair:
    if spec.delta <= 0:
        raise ModelError(f"delta must be positive, got {spec.delta}")
    try:
        pair = VariationPair(
            model_plus=apply_variation(base, spec, Sign.PLUS),
            model_minus=apply_variation(base, spec, Sign.MINUS),
            spec=spec,
            reference=reference_model(base, spec),
        )
    except Exception as e:
        if isinstance(e, ModelError):
            raise
        raise ModelError(f"Could not build variation pair for {spec.name}: {e}")
    if grid is not None:
        check_cfl(pair.model_plus, grid, f"{spec.name} (+)")
        check_cfl(pair.model_minus, grid, f"{spec.name} (-)")
    return pair


def material_derivative(pair: VariationPair) -> MaterialDerivatives:
    delta2 = 2.0 * pair.spec.delta
    plus, minus, ref = pair.model_plus, pair.model_minus, pair.reference
    d_rho = (plus.rho - minus.rho) / delta2
    d_stiffness = (plus.stiffness - minus.stiffness) / delta2
    if pair.spec.kind.is_geometric:
        # interfaces are distributional, difference every field directly
        d_compliance = (1.0 / plus.stiffness - 1.0 / minus.stiffness) / delta2
        d_rho_over_stiffness = (plus.rho / plus.stiffness - minus.rho / minus.stiffness) / delta2
    else:
        k2 = ref.stiffness**2
        d_compliance = -d_stiffness / k2
        d_rho_over_stiffness = d_rho / ref.stiffness - ref.rho * d_stiffness / k2
    return MaterialDerivatives(
        d_rho=d_rho,
        d_stiffness=d_stiffness,
        d_compliance=d_compliance,
        d_rho_over_stiffness=d_rho_over_stiffness,
        reference=ref,
        spec=pair.spec,
    )


def interface_nodes(model: MaterialField) -> list[tuple[str, int]]:
    """Velocity nodes that sit on a layer interface, named left/right per layer."""
    nodes = []
    for i, layer in enumerate(model.layers):
        suffix = "" if len(model.layers) == 1 else f"_{i}"
        if not layer.touches_left:
            nodes.append((f"left{suffix}", layer.start))
        if not layer.touches_right:
            nodes.append((f"right{suffix}", layer.end))
    return nodes


def shifted_layer(layer: LayerCells, start: int, end: int) -> LayerCells:
    return replace(layer, start=start, end=end)

from data_model import LayerCells, MaterialField, ParameterKind, ParameterSpec, Sign
from model import ModelError, shifted_layer, with_layers

from .base_variation import BaseVariation


class GeometricVariation(BaseVariation):
    """Moves layer boundaries by whole cells; the layer material is untouched."""

    kinds = (
        ParameterKind.LAYER_POSITION,
        ParameterKind.LAYER_THICKNESS,
        ParameterKind.BOUNDARY_POSITION,
    )

    def apply(self, base: MaterialField, spec: ParameterSpec, sign: Sign) -> MaterialField:
        layers = list(base.layers)
        if not 0 <= spec.layer_index < len(layers):
            raise ModelError(f"layer_index {spec.layer_index} out of range for {len(layers)} layer(s)")
        layer = layers[spec.layer_index]
        shift = self._shift_cells(spec, base.dx) * int(sign)

        if spec.kind == ParameterKind.LAYER_POSITION:
            start, end = self._moved_position(layer, shift)
        elif spec.kind == ParameterKind.LAYER_THICKNESS:
            start, end = self._moved_thickness(layer, shift)
        else:
            start, end = self._moved_boundary(layer, shift, spec.boundary)

        self._check(base, layers, spec.layer_index, layer, start, end)
        layers[spec.layer_index] = shifted_layer(layer, start, end)
        return with_layers(base, layers)

    @staticmethod
    def _shift_cells(spec: ParameterSpec, dx: float) -> int:
        cells = spec.delta / dx
        whole = int(round(cells))
        if whole < 1 or abs(cells - whole) > 1e-6 * max(1.0, cells):
            raise ModelError(f"delta={spec.delta} is not a whole multiple of dx={dx}")
        return whole

    @staticmethod
    def _moved_position(layer: LayerCells, shift: int) -> tuple[int, int]:
        if layer.touches_left and layer.touches_right:
            raise ModelError("layer spans the whole grid, it has no boundary to move")
        # a half-space keeps its edge; only the interior boundary moves
        start = layer.start if layer.touches_left else layer.start + shift
        end = layer.end if layer.touches_right else layer.end + shift
        return start, end

    @staticmethod
    def _moved_thickness(layer: LayerCells, shift: int) -> tuple[int, int]:
        if layer.touches_left or layer.touches_right:
            raise ModelError("thickness variation needs a layer with two interior boundaries")
        if shift % 2:
            raise ModelError(f"thickness delta must be an even number of cells, got {abs(shift)}")
        half = shift // 2
        return layer.start - half, layer.end + half

    @staticmethod
    def _moved_boundary(layer: LayerCells, shift: int, boundary) -> tuple[int, int]:
        if boundary == "left":
            if layer.touches_left:
                raise ModelError("left boundary of this layer is the model edge")
            return layer.start + shift, layer.end
        if boundary == "right":
            if layer.touches_right:
                raise ModelError("right boundary of this layer is the model edge")
            return layer.start, layer.end + shift
        raise ModelError(f"boundary must be 'left' or 'right', got {boundary!r}")

    @staticmethod
    def _check(base: MaterialField, layers, index: int, layer: LayerCells, start: int, end: int) -> None:
        low = 0 if layer.touches_left else 1
        high = base.n_cells if layer.touches_right else base.n_cells - 1
        if start < low or end > high:
            raise ModelError(f"moved layer [{start}, {end}) leaves the grid interior [0, {base.n_cells})")
        if start >= end:
            raise ModelError(f"moved layer boundaries cross: [{start}, {end})")
        for i, other in enumerate(layers):
            if i != index and start < other.end and other.start < end:
                raise ModelError(f"moved layer [{start}, {end}) crosses layer {i} [{other.start}, {other.end})")

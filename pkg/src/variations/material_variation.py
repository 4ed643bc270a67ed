import math

from loguru import logger

from data_model import LayerCells, MaterialField, ParameterKind, ParameterSpec, Sign
from model import ModelError, with_layers

from .base_variation import BaseVariation

# varied quantity, held quantity
_QUANTITIES = {
    ParameterKind.SOUND_SPEED_CONST_RHO: ("c_p", "rho"),
    ParameterKind.STIFFNESS_CONST_RHO: ("stiffness", "rho"),
    ParameterKind.DENSITY_CONST_CP: ("rho", "c_p"),
    ParameterKind.STIFFNESS_CONST_CP: ("stiffness", "c_p"),
    ParameterKind.DENSITY_CONST_STIFFNESS: ("rho", "stiffness"),
    ParameterKind.SOUND_SPEED_CONST_STIFFNESS: ("c_p", "stiffness"),
}


class MaterialVariation(BaseVariation):
    """Changes one material quantity of a layer while holding a second one."""

    kinds = tuple(_QUANTITIES)

    def apply(self, base: MaterialField, spec: ParameterSpec, sign: Sign) -> MaterialField:
        return self._with_value(base, spec, spec.reference_value + int(sign) * spec.delta)

    def reference(self, base: MaterialField, spec: ParameterSpec) -> MaterialField:
        layer = self._layer(base, spec)
        varied, _ = _QUANTITIES[spec.kind]
        nominal = _value(layer, varied)
        if not math.isclose(nominal, spec.reference_value, rel_tol=1e-12):
            logger.warning(
                f"{spec.name}: layer {spec.layer_index} re-based from {varied}={nominal:.6g} "
                f"to reference {spec.reference_value:.6g}"
            )
        return self._with_value(base, spec, spec.reference_value)

    def _with_value(self, base: MaterialField, spec: ParameterSpec, value: float) -> MaterialField:
        layer = self._layer(base, spec)
        varied, held = _QUANTITIES[spec.kind]
        if value <= 0:
            raise ModelError(f"{spec.name}: {varied} would become non-positive ({value})")
        rho, stiffness = _solve(varied, value, held, _value(layer, held))
        layers = list(base.layers)
        layers[spec.layer_index] = LayerCells(
            start=layer.start,
            end=layer.end,
            rho=rho,
            stiffness=stiffness,
            touches_left=layer.touches_left,
            touches_right=layer.touches_right,
        )
        return with_layers(base, layers)

    @staticmethod
    def _layer(base: MaterialField, spec: ParameterSpec) -> LayerCells:
        if not 0 <= spec.layer_index < len(base.layers):
            raise ModelError(f"layer_index {spec.layer_index} out of range for {len(base.layers)} layer(s)")
        return base.layers[spec.layer_index]


def _value(layer: LayerCells, quantity: str) -> float:
    return float(getattr(layer, quantity))


def _solve(varied: str, value: float, held: str, held_value: float) -> tuple[float, float]:
    """Density and stiffness from one varied and one held quantity."""
    given = {varied: value, held: held_value}
    if "rho" in given and "c_p" in given:
        return given["rho"], given["rho"] * given["c_p"] ** 2
    if "rho" in given:
        return given["rho"], given["stiffness"]
    # c_p and stiffness
    return given["stiffness"] / given["c_p"] ** 2, given["stiffness"]

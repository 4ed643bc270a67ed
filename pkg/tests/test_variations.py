import pytest

from conftest import MATRIX
from data_model import GridSpec, LayerSpec, ParameterKind, ParameterSpec, Sign
from model import ModelError, build_layered_model
from variations import BaseVariation, GeometricVariation, MaterialVariation


def test_base_variation_is_abstract(tiny_model) -> None:
    spec = ParameterSpec(kind=ParameterKind.LAYER_POSITION, reference_value=0.025, delta=1e-3)
    with pytest.raises(NotImplementedError):
        BaseVariation().apply(tiny_model, spec, Sign.PLUS)


def test_each_valid_kind_has_one_handler() -> None:
    handlers = (GeometricVariation(), MaterialVariation())
    for kind in ParameterKind:
        spec = ParameterSpec(kind=kind, reference_value=1.0, delta=0.1)
        count = sum(h.handles(spec) for h in handlers)
        assert count == (0 if spec.validity_case is None else 1), kind


def test_moved_layer_may_not_cross_another() -> None:
    grid = GridSpec(n_cells=100, dx=1e-3, dt=1e-7, n_steps=10)
    layers = [LayerSpec(20e-3, 30e-3, 2600.0, 4500.0), LayerSpec(31e-3, 40e-3, 2600.0, 4500.0)]
    model = build_layered_model(grid, MATRIX, layers)
    spec = ParameterSpec(kind=ParameterKind.LAYER_POSITION, reference_value=0.025, delta=2e-3)
    with pytest.raises(ModelError, match="crosses layer 1"):
        GeometricVariation().apply(model, spec, Sign.PLUS)


def test_stiffness_const_cp_scales_density(tiny_model) -> None:
    k = 2600.0 * 4500.0**2
    spec = ParameterSpec(kind=ParameterKind.STIFFNESS_CONST_CP, reference_value=k, delta=0.01 * k)
    plus = MaterialVariation().apply(tiny_model, spec, Sign.PLUS)
    assert plus.stiffness[25] == pytest.approx(1.01 * k)
    assert plus.c_p[25] == pytest.approx(4500.0, rel=1e-12)
    assert plus.rho[25] == pytest.approx(1.01 * 2600.0)


def test_density_const_stiffness_changes_sound_speed(tiny_model) -> None:
    spec = ParameterSpec(kind=ParameterKind.DENSITY_CONST_STIFFNESS, reference_value=2600.0, delta=100.0)
    minus = MaterialVariation().apply(tiny_model, spec, Sign.MINUS)
    assert minus.rho[25] == 2500.0
    assert minus.stiffness[25] == pytest.approx(2600.0 * 4500.0**2)
    assert minus.c_p[25] > 4500.0


def test_non_positive_material_rejected(tiny_model) -> None:
    spec = ParameterSpec(kind=ParameterKind.DENSITY_CONST_CP, reference_value=2600.0, delta=3000.0)
    with pytest.raises(ModelError, match="non-positive"):
        MaterialVariation().apply(tiny_model, spec, Sign.MINUS)

import numpy as np
import pytest

from conftest import MATRIX
from data_model import GridSpec, LayerSpec, ParameterKind, ParameterSpec, Sign, ValidityCase
from model import (
    ModelError,
    UnsupportedParameterCombination,
    apply_variation,
    build_layered_model,
    check_cfl,
    classify_parameter,
    interface_nodes,
    material_derivative,
    reference_model,
    variation_pair,
)


def _spec(kind: ParameterKind, reference: float, delta: float, **kwargs) -> ParameterSpec:
    return ParameterSpec(kind=kind, reference_value=reference, delta=delta, **kwargs)


def test_layer_snaps_to_cells(tiny_model) -> None:
    (layer,) = tiny_model.layers
    assert (layer.start, layer.end) == (20, 30)
    assert tiny_model.rho[19] == 2400.0
    assert tiny_model.rho[20] == 2600.0
    assert tiny_model.rho[29] == 2600.0
    assert tiny_model.rho[30] == 2400.0
    assert tiny_model.stiffness[25] == pytest.approx(2600.0 * 4500.0**2)
    assert not layer.touches_left and not layer.touches_right


def test_node_density_averages_neighbouring_cells(tiny_model) -> None:
    node_rho = tiny_model.node_rho
    assert node_rho.shape == (101,)
    assert node_rho[0] == 2400.0
    assert node_rho[-1] == 2400.0
    assert node_rho[20] == pytest.approx(2500.0)
    assert node_rho[25] == 2600.0


def test_model_arrays_are_read_only(tiny_model) -> None:
    with pytest.raises(ValueError):
        tiny_model.rho[0] = 1.0


def test_overlapping_layers_rejected(tiny_grid) -> None:
    layers = [LayerSpec(10e-3, 30e-3, 2600.0, 4500.0), LayerSpec(25e-3, 40e-3, 2600.0, 4500.0)]
    with pytest.raises(ModelError, match="Overlapping"):
        build_layered_model(tiny_grid, MATRIX, layers)


def test_layer_outside_grid_rejected(tiny_grid) -> None:
    with pytest.raises(ModelError, match="outside the grid"):
        build_layered_model(tiny_grid, MATRIX, [LayerSpec(90e-3, 120e-3, 2600.0, 4500.0)])


def test_cfl_violation_names_fastest_cell(tiny_model) -> None:
    grid = GridSpec(n_cells=100, dx=1e-3, dt=1.1e-3 / 4500.0, n_steps=10)
    with pytest.raises(ModelError, match="cell 20"):
        check_cfl(tiny_model, grid)


def test_validity_cases() -> None:
    assert classify_parameter(_spec(ParameterKind.LAYER_POSITION, 0.025, 1e-3)) == ValidityCase.CASE0
    assert classify_parameter(_spec(ParameterKind.SOUND_SPEED_CONST_RHO, 4500.0, 1.0)) == ValidityCase.CASE1
    assert classify_parameter(_spec(ParameterKind.DENSITY_CONST_CP, 2600.0, 1.0)) == ValidityCase.CASE2
    assert classify_parameter(_spec(ParameterKind.DENSITY_CONST_STIFFNESS, 2600.0, 1.0)) == ValidityCase.CASE3


@pytest.mark.parametrize(
    "kind",
    [
        ParameterKind.DENSITY_AND_SOUND_SPEED,
        ParameterKind.DENSITY_AND_STIFFNESS,
        ParameterKind.SOUND_SPEED_AND_STIFFNESS,
    ],
)
def test_two_quantity_kinds_rejected(kind, tiny_model) -> None:
    spec = _spec(kind, 1.0, 0.1)
    with pytest.raises(UnsupportedParameterCombination):
        classify_parameter(spec)
    with pytest.raises(ModelError):
        variation_pair(tiny_model, spec)


def test_position_pair_shifts_both_boundaries(tiny_model) -> None:
    pair = variation_pair(tiny_model, _spec(ParameterKind.LAYER_POSITION, 0.025, 1e-3))
    plus, minus = pair.model_plus.layers[0], pair.model_minus.layers[0]
    assert (plus.start, plus.end) == (21, 31)
    assert (minus.start, minus.end) == (19, 29)
    assert pair.reference is tiny_model


def test_thickness_pair_grows_symmetrically(tiny_model) -> None:
    pair = variation_pair(tiny_model, _spec(ParameterKind.LAYER_THICKNESS, 0.010, 2e-3))
    assert (pair.model_plus.layers[0].start, pair.model_plus.layers[0].end) == (19, 31)
    assert (pair.model_minus.layers[0].start, pair.model_minus.layers[0].end) == (21, 29)


def test_thickness_needs_even_cell_count(tiny_model) -> None:
    with pytest.raises(ModelError, match="even"):
        variation_pair(tiny_model, _spec(ParameterKind.LAYER_THICKNESS, 0.010, 1e-3))


def test_geometric_delta_must_be_whole_cells(tiny_model) -> None:
    with pytest.raises(ModelError, match="whole multiple"):
        variation_pair(tiny_model, _spec(ParameterKind.LAYER_POSITION, 0.025, 1.5e-3))


def test_boundary_position_moves_one_side(tiny_model) -> None:
    spec = _spec(ParameterKind.BOUNDARY_POSITION, 0.030, 1e-3, boundary="right")
    plus = apply_variation(tiny_model, spec, Sign.PLUS)
    assert (plus.layers[0].start, plus.layers[0].end) == (20, 31)


def test_half_space_keeps_its_edge(tiny_grid) -> None:
    model = build_layered_model(tiny_grid, MATRIX, [LayerSpec(60e-3, 100e-3, 2600.0, 4500.0)])
    (layer,) = model.layers
    assert layer.touches_right
    plus = apply_variation(model, _spec(ParameterKind.LAYER_POSITION, 0.08, 1e-3), Sign.PLUS)
    assert (plus.layers[0].start, plus.layers[0].end) == (61, 100)
    assert interface_nodes(model) == [("left", 60)]
    with pytest.raises(ModelError):
        variation_pair(model, _spec(ParameterKind.LAYER_THICKNESS, 0.04, 2e-3))


def test_zero_delta_returns_base(tiny_model) -> None:
    spec = _spec(ParameterKind.LAYER_POSITION, 0.025, 0.0)
    assert apply_variation(tiny_model, spec, Sign.PLUS) is tiny_model


def test_density_const_cp_holds_sound_speed(tiny_model) -> None:
    pair = variation_pair(tiny_model, _spec(ParameterKind.DENSITY_CONST_CP, 2600.0, 1.0))
    np.testing.assert_allclose(pair.model_plus.c_p[20:30], 4500.0, rtol=1e-12)
    assert pair.model_plus.rho[25] == 2601.0
    assert pair.model_minus.rho[25] == 2599.0
    assert pair.model_plus.rho[10] == 2400.0


def test_reference_rebases_layer(tiny_model) -> None:
    spec = _spec(ParameterKind.SOUND_SPEED_CONST_RHO, 4499.0, 1.0)
    ref = reference_model(tiny_model, spec)
    assert ref.c_p[25] == pytest.approx(4499.0, rel=1e-12)
    assert ref.rho[25] == 2600.0
    pair = variation_pair(tiny_model, spec)
    assert pair.model_plus.c_p[25] == pytest.approx(4500.0, rel=1e-12)
    assert pair.model_minus.c_p[25] == pytest.approx(4498.0, rel=1e-12)


def test_material_derivative_chain_rule(tiny_model) -> None:
    derivs = material_derivative(variation_pair(tiny_model, _spec(ParameterKind.DENSITY_CONST_CP, 2600.0, 1.0)))
    np.testing.assert_array_equal(derivs.varied_cells, np.arange(20, 30))
    assert derivs.d_rho[25] == pytest.approx(1.0)
    assert derivs.d_stiffness[25] == pytest.approx(4500.0**2, rel=1e-9)
    k = 2600.0 * 4500.0**2
    assert derivs.d_compliance[25] == pytest.approx(-(4500.0**2) / k**2, rel=1e-9)
    # rho / stiffness is 1 / c_p**2, constant when c_p is held
    assert derivs.d_rho_over_stiffness[25] == pytest.approx(0.0, abs=1e-20)
    assert derivs.d_rho[10] == 0.0


def test_geometric_derivative_lives_on_moved_cells(tiny_model) -> None:
    derivs = material_derivative(variation_pair(tiny_model, _spec(ParameterKind.LAYER_POSITION, 0.025, 1e-3)))
    np.testing.assert_array_equal(derivs.varied_cells, [19, 20, 29, 30])
    assert derivs.d_rho[19] == pytest.approx((2400.0 - 2600.0) / 2e-3)
    assert derivs.d_rho[30] == pytest.approx((2600.0 - 2400.0) / 2e-3)


def test_interface_nodes_of_embedded_layer(tiny_model) -> None:
    assert interface_nodes(tiny_model) == [("left", 20), ("right", 30)]

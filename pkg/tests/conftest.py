import pytest

from data_model import Excitation, GridSpec, LayerSpec, Material
from model import build_layered_model

MATRIX = Material(rho=2400.0, c_p=4000.0)
LAYER = LayerSpec(x_start=20e-3, x_end=30e-3, rho=2600.0, c_p=4500.0)

# the layered model of the shipped presets on a four times coarser grid
COARSE_DX = 57.471264e-6
COARSE_DT = 12.771392e-9
COARSE_CELLS = 870

COARSE_TOML = """
name = "coarse"

[grid]
n_cells = 870
dx = 57.471264e-6
dt = 12.771392e-9
end_time_us = {end_time_us}

[matrix]
rho = 2400.0
c_p = 4000.0

[[layers]]
x_start_mm = 20.0
x_end_mm = 30.0
rho = 2600.0
c_p = 4500.0

[excitation]
center_frequency = 2.0e6
n_cycles = 2

{variations}

[recording]
snapshot_times_us = [1.2, 6.53]
snapshot_stride = 1
stride_window_us = [4.0, 11.0]
probe_cells = [174, 435, 696]

[output]
directory = "output/coarse"
formats = ["csv", "table"]

[analysis]
window_us = [0.0, {end_time_us}]
sensor_windows = ["excitation", "reflection_left"]
"""

FOUR_VARIATIONS = """
[[variations]]
label = "position"
kind = "layer_position"
reference_value = 0.025
delta_cells = 1

[[variations]]
label = "thickness"
kind = "layer_thickness"
reference_value = 0.010
delta_cells = 2

[[variations]]
label = "sound_speed"
kind = "sound_speed_const_rho"
reference_value = 4499.0
delta = 1.0

[[variations]]
label = "density"
kind = "density_const_cp"
reference_value = 2600.0
delta = 1.0
"""


def coarse_toml(variations: str = FOUR_VARIATIONS, end_time_us: float = 16.0) -> str:
    return COARSE_TOML.format(variations=variations, end_time_us=end_time_us)


@pytest.fixture
def coarse_grid() -> GridSpec:
    return GridSpec(n_cells=COARSE_CELLS, dx=COARSE_DX, dt=COARSE_DT, n_steps=940)


@pytest.fixture
def coarse_model(coarse_grid):
    return build_layered_model(coarse_grid, MATRIX, [LAYER])


@pytest.fixture
def excitation() -> Excitation:
    return Excitation(center_frequency=2.0e6, n_cycles=2)


@pytest.fixture
def tiny_grid() -> GridSpec:
    # 100 cells of 1 mm, far coarser than any run, for model bookkeeping only
    return GridSpec(n_cells=100, dx=1e-3, dt=1e-7, n_steps=10)


@pytest.fixture
def tiny_model(tiny_grid):
    return build_layered_model(tiny_grid, MATRIX, [LayerSpec(x_start=20e-3, x_end=30e-3, rho=2600.0, c_p=4500.0)])

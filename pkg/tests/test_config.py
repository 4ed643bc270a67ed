import pytest

from acceptance import coarsened
from config import ConfigError, load_config, load_preset, parse_config, preset_names, serialize_config
from conftest import COARSE_CELLS, COARSE_DT, COARSE_DX, coarse_toml
from data_model import ParameterKind


def test_every_preset_loads() -> None:
    names = preset_names()
    assert {"fig2", "fig3", "fig9", "fig24", "homogeneous"} <= set(names)
    for name in names:
        assert load_preset(name).name == name


def test_three_layer_preset() -> None:
    cfg = load_preset("fig2")
    assert cfg.grid.n_steps == 5011
    assert cfg.grid.end_time_us is None
    specs = cfg.parameter_specs()
    assert [s.label for s in specs] == ["position", "thickness", "sound_speed", "density"]
    assert specs[0].kind == ParameterKind.LAYER_POSITION
    assert specs[0].delta == pytest.approx(14.367816e-6)
    assert specs[1].delta == pytest.approx(2 * 14.367816e-6)
    plan = cfg.recording_plan()
    assert plan.snapshot_times[0] == pytest.approx(1.2e-6)
    assert plan.stride_window == pytest.approx((4e-6, 11e-6))
    assert cfg.recording_plan(stride=0).snapshot_stride == 0
    assert cfg.analysis_window() == pytest.approx((0.0, 16e-6))


def test_serialized_config_parses_back() -> None:
    cfg = parse_config(coarse_toml())
    assert parse_config(serialize_config(cfg)) == cfg


def test_unknown_key_names_its_path() -> None:
    text = coarse_toml().replace("[grid]\n", "[grid]\nfoo = 1\n")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == "grid.foo"
    assert "unknown key 'foo'" in str(info.value)


def test_malformed_toml_reports_line() -> None:
    with pytest.raises(ConfigError) as info:
        parse_config('name = "x"\n[grid\n')
    assert info.value.line == 2


def test_missing_table_rejected() -> None:
    with pytest.raises(ConfigError, match=r"missing \[matrix\]"):
        parse_config('[grid]\nn_cells = 10\ndx = 1e-3\ndt = 1e-7\nn_steps = 5\n')


def test_type_mismatch_rejected() -> None:
    with pytest.raises(ConfigError) as info:
        parse_config(coarse_toml().replace("n_cells = 870", 'n_cells = "870"'))
    assert info.value.field == "grid.n_cells"


def test_cfl_violation_names_the_layer() -> None:
    text = coarse_toml(variations="").replace("c_p = 4500.0", "c_p = 5000.0")
    with pytest.raises(ConfigError, match=r"layers\[0\]") as info:
        parse_config(text)
    assert info.value.field == "grid.dt"


def test_cfl_covers_the_varied_sound_speed() -> None:
    variation = """
[[variations]]
kind = "sound_speed_const_rho"
reference_value = 4500.0
delta = 10.0
"""
    with pytest.raises(ConfigError, match=r"variations\[0\]"):
        parse_config(coarse_toml(variations=variation))


def test_delta_cells_only_for_geometric_kinds() -> None:
    variation = """
[[variations]]
kind = "density_const_cp"
reference_value = 2600.0
delta_cells = 1
"""
    with pytest.raises(ConfigError) as info:
        parse_config(coarse_toml(variations=variation))
    assert info.value.field == "variations[0].delta_cells"


def test_variation_needs_a_delta() -> None:
    variation = """
[[variations]]
kind = "density_const_cp"
reference_value = 2600.0
"""
    with pytest.raises(ConfigError, match="delta"):
        parse_config(coarse_toml(variations=variation))


def test_no_variations_is_a_valid_run() -> None:
    cfg = parse_config(coarse_toml(variations=""))
    assert cfg.variations == []
    assert cfg.parameter_specs() == []


def test_unknown_sensor_window_rejected() -> None:
    text = coarse_toml().replace('"reflection_left"]', '"echo"]')
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == "analysis.sensor_windows[1]"


def test_unknown_format_and_preset_rejected(tmp_path) -> None:
    with pytest.raises(ConfigError, match="unknown format"):
        parse_config(coarse_toml().replace('formats = ["csv", "table"]', 'formats = ["parquet"]'))
    with pytest.raises(ConfigError, match="unknown preset"):
        load_preset("fig99")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.toml")


def test_file_name_is_the_default_run_name(tmp_path) -> None:
    path = tmp_path / "bar.toml"
    path.write_text(coarse_toml().replace('name = "coarse"\n', ""), encoding="utf-8")
    assert load_config(path).name == "bar"


def test_coarsened_preset_matches_the_coarse_grid() -> None:
    cfg = coarsened(load_preset("fig2"), 4, keep=["position", "density"])
    assert cfg.name == "fig2_coarse4"
    assert cfg.grid.n_cells == COARSE_CELLS
    assert cfg.grid.dx == pytest.approx(COARSE_DX)
    assert cfg.grid.dt == pytest.approx(COARSE_DT)
    assert cfg.recording.probe_cells == [174, 435, 696]
    assert [v.label for v in cfg.variations] == ["position", "density"]
    assert cfg.variations[0].delta == pytest.approx(COARSE_DX)
    assert cfg.variations[1].delta == 1.0
    assert cfg.output.snapshots is False
    with pytest.raises(ConfigError, match="do not coarsen"):
        coarsened(load_preset("fig2"), 7)

import json
import os

import numpy as np
import pandas as pd
import pytest

from file_utils import (
    RECIPE_ALIASES,
    ConfigError,
    RunConfig,
    build_manifest,
    build_run_config,
    ensure_output_dir,
    image_axis,
    image_frame,
    load_run_config,
    map_axes,
    map_frame,
    parse_length,
    resolve_config_path,
    search_spec,
    sweep_axis,
    sweep_frame,
    write_outputs,
)
from imaging_engine import ImageProfile, SlitKind, SlitObject
from optics_core import PumpKind
from resolution import SweepPoint, SweepTable
from spdc_state import JointAmplitudeMap, Representation


def _raw(**overrides):
    raw = {
        "name": "essai",
        "optical": {"lambda_signal": "530nm", "lambda_idler": "10um", "L": "100nm"},
        "pump": {"kind": "gaussian", "sigma_p": "1m"},
        "object": {"kind": "double_slit", "separation_d": "4.5um"},
    }
    raw.update(overrides)
    return raw


class TestParseLength:
    @pytest.mark.parametrize("text, expected", [
        ("530nm", 530e-9),
        ("10um", 10e-6),
        ("10 μm", 10e-6),
        ("1.5e-3 m", 1.5e-3),
        ("2mm", 2e-3),
        ("3", 3.0),
        (4.5e-6, 4.5e-6),
    ])
    def test_units(self, text, expected):
        assert parse_length(text) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("text", ["10 furlongs", "abc", True, None])
    def test_rejected(self, text):
        with pytest.raises(ConfigError) as excinfo:
            parse_length(text, "optical.L")
        assert excinfo.value.field_path == "optical.L"
        assert str(excinfo.value).startswith("optical.L")


class TestBuildRunConfig:
    def test_signal_idler_pair(self):
        run = build_run_config(_raw())
        assert run.optical.lambda_pump == pytest.approx(1.0 / (1.0 / 530e-9 + 1.0 / 10e-6))
        assert run.optical.L_A == run.optical.L_B == pytest.approx(100e-9)
        assert run.pump.kind == PumpKind.GAUSSIAN
        assert run.object.kind == SlitKind.DOUBLE_SLIT
        assert run.formats == ["csv", "json"]
        assert os.path.isabs(run.output_dir) and run.output_dir.endswith(os.path.join("results", "essai"))

    def test_pump_signal_pair_with_separate_thicknesses(self):
        run = build_run_config(_raw(optical={"lambda_pump": "500nm", "lambda_signal": "900nm",
                                             "L_A": "3nm", "L_B": "20um"}))
        assert run.optical.lambda_idler == pytest.approx(1.0 / (1.0 / 500e-9 - 1.0 / 900e-9))
        assert (run.optical.L_A, run.optical.L_B) == pytest.approx((3e-9, 20e-6))

    def test_pump_idler_pair(self):
        run = build_run_config(_raw(optical={"lambda_pump": "500nm", "lambda_idler": "1000nm", "L": 0}))
        assert run.optical.lambda_signal == pytest.approx(1000e-9, rel=1e-12)

    def test_negative_thickness_names_field(self):
        with pytest.raises(ConfigError) as excinfo:
            build_run_config(_raw(optical={"lambda_signal": "530nm", "lambda_idler": "10um", "L": "-1nm"}))
        assert excinfo.value.field_path == "optical.L"

    def test_three_wavelengths_rejected(self):
        with pytest.raises(ConfigError, match="deux longueurs"):
            build_run_config(_raw(optical={"lambda_pump": "500nm", "lambda_signal": "1um",
                                           "lambda_idler": "1um", "L": "1nm"}))

    def test_unphysical_idler(self):
        with pytest.raises(ConfigError) as excinfo:
            build_run_config(_raw(optical={"lambda_pump": "500nm", "lambda_signal": "400nm", "L": "1nm"}))
        assert excinfo.value.field_path == "optical"

    def test_missing_thickness(self):
        with pytest.raises(ConfigError) as excinfo:
            build_run_config(_raw(optical={"lambda_signal": "530nm", "lambda_idler": "10um", "L_A": "1nm"}))
        assert excinfo.value.field_path == "optical.L_B"

    def test_gaussian_pump_needs_width(self):
        with pytest.raises(ConfigError) as excinfo:
            build_run_config(_raw(pump={"kind": "gaussian"}))
        assert excinfo.value.field_path == "pump.sigma_p"

    def test_unknown_pump_kind(self):
        with pytest.raises(ConfigError) as excinfo:
            build_run_config(_raw(pump={"kind": "bessel"}))
        assert excinfo.value.field_path == "pump.kind"

    def test_plane_wave_pump(self):
        assert build_run_config(_raw(pump={"kind": "plane_wave"})).pump.kind == PumpKind.PLANE_WAVE

    def test_object_variants(self):
        assert build_run_config(_raw(object={"kind": "single_slit"})).object.kind == SlitKind.SINGLE_SLIT
        assert build_run_config(_raw(object={"kind": "none"})).object.transmission_weight == 0.0
        assert build_run_config(_raw(object=None)).object is None
        weighted = build_run_config(_raw(object={"kind": "single_slit", "transmission_weight": "2nm"}))
        assert weighted.object.transmission_weight == pytest.approx(2e-9)

    def test_double_slit_needs_separation(self):
        with pytest.raises(ConfigError) as excinfo:
            build_run_config(_raw(object={"kind": "double_slit"}))
        assert excinfo.value.field_path == "object.separation_d"

    def test_quadrature_bounds(self):
        with pytest.raises(ConfigError) as excinfo:
            build_run_config(_raw(quadrature={"n_theta": 8}))
        assert excinfo.value.field_path == "quadrature"

    def test_missing_section(self):
        raw = _raw()
        del raw["pump"]
        with pytest.raises(ConfigError) as excinfo:
            build_run_config(raw)
        assert excinfo.value.field_path == "pump"

    def test_manifest_is_json_serializable(self):
        manifest = build_run_config(_raw(), source="essai.json").to_manifest()
        text = json.dumps(manifest)
        assert json.loads(text)["optical"]["lambda_signal"] == pytest.approx(530e-9)


class TestLoading:
    def test_invalid_json_reports_position(self, tmp_path):
        path = tmp_path / "cassé.json"
        path.write_text('{\n  "optical": {\n    "L": 1,,\n  }\n}', encoding="utf-8")
        with pytest.raises(ConfigError, match="ligne 3"):
            load_run_config(str(path))

    def test_name_defaults_to_file_stem(self, tmp_path):
        raw = _raw()
        del raw["name"]
        path = tmp_path / "double_fente.json"
        path.write_text(json.dumps(raw), encoding="utf-8")
        assert load_run_config(str(path)).name == "double_fente"

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="introuvable"):
            resolve_config_path("n_existe_pas.json")

    @pytest.mark.parametrize("name", [
        "map_thin_degenerate", "map_thin_nondegenerate", "map_thick_degenerate", "map_thick_nondegenerate",
        "image_thin_crystal", "image_thick_crystal", "sweep_thickness", "sweep_pump_width", "sweep_wavelengths",
    ])
    def test_bundled_recipes_load(self, name):
        run = load_run_config(name)
        assert run.name == name
        assert run.output_dir.endswith(os.path.join("results", name))

    @pytest.mark.parametrize("alias", sorted(RECIPE_ALIASES))
    def test_recipe_short_names(self, alias):
        target = RECIPE_ALIASES[alias]
        assert os.path.basename(resolve_config_path(alias)) == f"{target}.json"
        assert load_run_config(f"{alias}.json").name == target

    def test_wavelength_recipe_is_a_log_grid(self):
        run = load_run_config("sweep_wavelengths")
        tree = run.sections["sweep"]
        lambda_s = sweep_axis(tree, "lambda_signal_values")
        lambda_i = sweep_axis(tree, "lambda_idler_values")
        assert len(lambda_s) == len(lambda_i) == 5
        assert lambda_s[0] == pytest.approx(530e-9) and lambda_s[-1] == pytest.approx(10e-6)
        np.testing.assert_allclose(np.diff(np.log(lambda_s)), np.log(10e-6 / 530e-9) / 4)
        assert run.object is None and run.sections["image"] == {}

    def test_output_dir_checks(self, tmp_path):
        target = tmp_path / "sortie" / "profonde"
        assert ensure_output_dir(str(target), ["csv"]) == str(target)
        assert target.is_dir()
        with pytest.raises(ConfigError) as excinfo:
            ensure_output_dir(str(target), ["xlsx"])
        assert excinfo.value.field_path == "output.formats"


class TestSectionAccessors:
    def test_image_axis_default_scales_with_separation(self):
        run = build_run_config(_raw())
        x = image_axis(run, run.object)
        assert x.size == 201
        assert x[-1] == pytest.approx(3 * 4.5e-6)

    def test_image_axis_single_slit_default(self):
        run = build_run_config(_raw(object={"kind": "single_slit"}))
        assert image_axis(run, run.object)[0] == pytest.approx(-30e-6)

    def test_image_axis_explicit_range(self):
        run = build_run_config(_raw(image={"x_range": ["-2um", "6um"], "n_points": 5}))
        np.testing.assert_allclose(image_axis(run, run.object), [-2e-6, 0.0, 2e-6, 4e-6, 6e-6], atol=1e-18)

    def test_image_axis_errors(self):
        run = build_run_config(_raw(image={"x_max": "5um", "n_points": 2}))
        with pytest.raises(ConfigError):
            image_axis(run, run.object)
        run = build_run_config(_raw(image={"x_range": ["6um", "-2um"]}))
        with pytest.raises(ConfigError):
            image_axis(run, run.object)

    def test_search_spec(self):
        spec = search_spec(build_run_config(_raw(search={"d_hi": "9um"})))
        assert spec.d_hi == pytest.approx(9e-6)
        assert spec.d_lo is None and spec.tol_d is None

    def test_sweep_axis_values_and_grids(self):
        tree = {
            "sigma_p_values": ["30um", "1m"],
            "L_values_grid": {"start": "10nm", "stop": "1mm", "num": 6},
            "lambda_idler_values_grid": {"start": "1um", "stop": "3um", "num": 3, "spacing": "linear"},
        }
        assert sweep_axis(tree, "sigma_p_values") == pytest.approx([30e-6, 1.0])
        assert sweep_axis(tree, "L_values") == pytest.approx([1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3])
        assert sweep_axis(tree, "lambda_idler_values") == pytest.approx([1e-6, 2e-6, 3e-6])
        assert sweep_axis(tree, "lambda_signal_values") is None

    def test_sweep_axis_errors(self):
        with pytest.raises(ConfigError) as excinfo:
            sweep_axis({"L_values": []}, "L_values")
        assert excinfo.value.field_path == "sweep.L_values"
        with pytest.raises(ConfigError):
            sweep_axis({"L_values_grid": {"start": "0m", "stop": "1mm"}}, "L_values")
        with pytest.raises(ConfigError):
            sweep_axis({"L_values_grid": {"stop": "1mm"}}, "L_values")

    def test_map_axes(self):
        run = build_run_config(_raw(map={"n_theta_s": 16, "n_theta_i": 8, "theta_s_max_deg": 6}))
        representation, axis_s, axis_i = map_axes(run)
        assert representation == Representation.ANGULAR
        assert axis_s.size == 16 and axis_i.size == 8
        assert axis_s.max() <= np.radians(6.0) + 1e-15
        momentum = build_run_config(_raw(map={"representation": "momentum", "n_theta_s": 8, "n_theta_i": 8}))
        assert map_axes(momentum)[0] == Representation.MOMENTUM
        with pytest.raises(ConfigError):
            map_axes(build_run_config(_raw(map={"representation": "polar"})))


class TestExport:
    def test_image_frame_with_background(self):
        profile = ImageProfile(x_axis=np.array([-1e-6, 0.0, 1e-6]), values=np.array([0.5, 1.0, 0.5]),
                               background=np.array([3.0, 3.0, 3.0]))
        frame = image_frame(profile)
        assert list(frame.columns) == ["x_S[m]", "I_norm", "background_norm",
                                       "rate_constructive_norm", "rate_destructive_norm"]
        np.testing.assert_allclose(frame["rate_constructive_norm"] + frame["rate_destructive_norm"], 6.0)

    def test_map_frame_layout(self):
        amap = JointAmplitudeMap(np.array([-0.1, 0.1]), np.array([-0.2, 0.0, 0.2]), np.ones((2, 3)),
                                 Representation.ANGULAR)
        frame = map_frame(amap)
        assert frame.shape == (2, 4)
        assert frame.columns[0] == "axis_s[rad] \\ axis_i[rad]"

    def test_sweep_frame_units(self):
        table = SweepTable("thickness", ["L"], [SweepPoint({"L": 1e-7}, 4.5e-6, None, 0.8, 0.45)])
        columns = list(sweep_frame(table).columns)
        assert "L[m]" in columns and "d_min[m]" in columns and "status" in columns

    def test_write_outputs(self, tmp_path):
        run = build_run_config(_raw(), source="essai.json")
        frame = pd.DataFrame({"x_S[m]": [0.0, 1e-6], "I_norm": [1.0, np.float64(0.25)]})
        manifest = build_manifest("image", run, {"dip_ratio": np.float64(0.8), "object": SlitKind.DOUBLE_SLIT},
                                  ["image", "--config", "essai.json"])
        written = write_outputs(str(tmp_path), "essai_image", frame, manifest, ["csv", "json"])
        assert [os.path.basename(p) for p in written] == ["essai_image.csv", "essai_image.manifest.json",
                                                          "essai_image.json"]
        saved = json.loads((tmp_path / "essai_image.manifest.json").read_text(encoding="utf-8"))
        assert saved["tool"] == "qiup-simulator"
        assert saved["results"] == {"dip_ratio": 0.8, "object": "double_slit"}
        assert saved["argv"] == ["image", "--config", "essai.json"]
        lines = (tmp_path / "essai_image.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "x_S[m],I_norm"
        assert lines[2] == "1.00000000e-06,2.50000000e-01"
        payload = json.loads((tmp_path / "essai_image.json").read_text(encoding="utf-8"))
        assert payload["data"]["I_norm"] == [1.0, 0.25]

    def test_manifest_only_when_no_frame(self, tmp_path):
        written = write_outputs(str(tmp_path), "vide", None, build_manifest("dmin", None, {}), ["csv"])
        assert [os.path.basename(p) for p in written] == ["vide.manifest.json"]


def test_run_config_is_dataclass():
    run = build_run_config(_raw())
    assert isinstance(run, RunConfig)
    assert run.sections["image"] == {}
    assert isinstance(run.object, SlitObject)

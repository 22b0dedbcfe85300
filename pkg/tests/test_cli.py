import json

import pandas as pd
import pytest

from file_utils import ConfigError
from imaging_engine import MalformedProfileError, QuadratureConvergenceError, WindowTooSmallError
from optics_core import OpticsDomainError, UnsupportedProfileError
from orchestrator import (
    EXIT_BRACKET,
    EXIT_CONFIG,
    EXIT_INTERRUPTED,
    EXIT_NUMERICAL,
    build_parser,
    exit_code_for,
    failure_report,
    main,
)
from resolution import BracketError


def _write_config(tmp_path, name="essai", **sections):
    raw = {
        "name": name,
        "optical": {"lambda_signal": "530nm", "lambda_idler": "10um", "L": "100nm"},
        "pump": {"kind": "gaussian", "sigma_p": "100um"},
        "quadrature": {"n_theta": 64, "n_refine_max": 3, "rel_tol": 1e-2},
        "output": {"directory": str(tmp_path / "sortie"), "formats": ["csv"]},
    }
    raw.update(sections)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(raw, ensure_ascii=False), encoding="utf-8")
    return str(path)


class TestExitCodes:
    @pytest.mark.parametrize("error, code", [
        (BracketError("pas de croisement", []), EXIT_BRACKET),
        (QuadratureConvergenceError("non convergé", 2e-3, 512), EXIT_NUMERICAL),
        (WindowTooSmallError("fenêtre", {}), EXIT_NUMERICAL),
        (MalformedProfileError("axe vide"), EXIT_NUMERICAL),
        (ConfigError("invalide", "optical.L"), EXIT_CONFIG),
        (OpticsDomainError("évanescent"), EXIT_CONFIG),
        (UnsupportedProfileError("onde plane"), EXIT_CONFIG),
        (RuntimeError("imprévu"), EXIT_INTERRUPTED),
    ])
    def test_mapping(self, error, code):
        assert exit_code_for(error) == code

    def test_failure_report_carries_diagnostics(self):
        report = failure_report(QuadratureConvergenceError("non convergé", 2e-3, 512))
        assert report["achieved_tol"] == 2e-3 and report["n_theta"] == 512
        assert failure_report(ConfigError("invalide", "optical.L"))["field"] == "optical.L"
        assert failure_report(BracketError("rien", [{"d": 1e-6, "dip": 0.9}]))["scan"][0]["dip"] == 0.9


class TestParser:
    def test_config_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["image"])

    def test_sweep_kind_choices(self):
        args = build_parser().parse_args(["sweep", "pump-width", "--config", "x.json", "-j", "2"])
        assert args.kind == "pump-width" and args.jobs == 2
        with pytest.raises(SystemExit):
            build_parser().parse_args(["sweep", "couleur", "--config", "x.json"])


class TestMain:
    def test_negative_thickness_exits_with_config_code(self, tmp_path, capsys):
        path = _write_config(tmp_path, optical={"lambda_signal": "530nm", "lambda_idler": "10um", "L": "-5nm"})
        with pytest.raises(SystemExit) as excinfo:
            main(["state-map", "--config", path])
        assert excinfo.value.code == EXIT_CONFIG
        assert "optical.L" in capsys.readouterr().out

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["image", "--config", str(tmp_path / "absent.json")])
        assert excinfo.value.code == EXIT_CONFIG

    def test_quadrature_override_validated(self, tmp_path):
        path = _write_config(tmp_path)
        with pytest.raises(SystemExit) as excinfo:
            main(["state-map", "--config", path, "--quad-n", "16"])
        assert excinfo.value.code == EXIT_CONFIG

    def test_state_map_writes_csv_and_manifest(self, tmp_path):
        path = _write_config(tmp_path, map={"n_theta_s": 16, "n_theta_i": 12, "theta_s_max_deg": 6})
        assert main(["state-map", "--config", path]) == 0
        frame = pd.read_csv(tmp_path / "sortie" / "essai_state_map.csv")
        assert frame.shape == (16, 13)
        manifest = json.loads((tmp_path / "sortie" / "essai_state_map.manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "state-map"
        assert manifest["argv"] == ["state-map", "--config", path]
        assert manifest["run_config"]["optical"]["lambda_idler"] == pytest.approx(10e-6)
        assert "signal_angle_cutoff" in manifest["results"]

    def test_state_map_is_byte_identical_across_runs(self, tmp_path):
        path = _write_config(tmp_path, map={"n_theta_s": 24, "n_theta_i": 24})
        first, second = tmp_path / "a", tmp_path / "b"
        main(["state-map", "--config", path, "--out", str(first)])
        main(["state-map", "--config", path, "--out", str(second), "--jobs", "3"])
        assert (first / "essai_state_map.csv").read_bytes() == (second / "essai_state_map.csv").read_bytes()

    def test_json_format_override(self, tmp_path):
        path = _write_config(tmp_path, map={"n_theta_s": 8, "n_theta_i": 8})
        main(["state-map", "--config", path, "--format", "json"])
        assert (tmp_path / "sortie" / "essai_state_map.json").exists()
        assert not (tmp_path / "sortie" / "essai_state_map.csv").exists()

    def test_image_with_separation_override(self, tmp_path):
        path = _write_config(tmp_path, image={"x_max": "6um", "n_points": 21})
        assert main(["image", "--config", path, "--d", "4.5um"]) == 0
        frame = pd.read_csv(tmp_path / "sortie" / "essai_image.csv")
        assert list(frame.columns) == ["x_S[m]", "I_norm", "background_norm",
                                       "rate_constructive_norm", "rate_destructive_norm"]
        assert frame["I_norm"].max() == pytest.approx(1.0)
        manifest = json.loads((tmp_path / "sortie" / "essai_image.manifest.json").read_text(encoding="utf-8"))
        assert 0 < manifest["results"]["dip_ratio"] <= 1
        assert manifest["results"]["image"]["object"]["separation_d"] == pytest.approx(4.5e-6)

    def test_plane_wave_image(self, tmp_path):
        path = _write_config(tmp_path, pump={"kind": "plane_wave"}, image={"x_max": "6um", "n_points": 21})
        assert main(["image", "--config", path, "--d", "4.5um"]) == 0
        manifest = json.loads((tmp_path / "sortie" / "essai_image.manifest.json").read_text(encoding="utf-8"))
        assert manifest["results"]["image"]["method"] == "plane_wave"

    def test_missing_object_writes_failure_report(self, tmp_path):
        path = _write_config(tmp_path)
        with pytest.raises(SystemExit) as excinfo:
            main(["image", "--config", path])
        assert excinfo.value.code == EXIT_CONFIG
        report = json.loads((tmp_path / "sortie" / "essai_image.failure.json").read_text(encoding="utf-8"))
        assert report["results"]["failure"]["field"] == "object"

    def test_state_map_rejects_plane_wave(self, tmp_path):
        path = _write_config(tmp_path, pump={"kind": "plane_wave"}, map={"n_theta_s": 8, "n_theta_i": 8})
        with pytest.raises(SystemExit) as excinfo:
            main(["state-map", "--config", path])
        assert excinfo.value.code == EXIT_CONFIG

    @pytest.mark.slow
    def test_sweep_with_every_point_failing(self, tmp_path):
        path = _write_config(tmp_path, pump={"kind": "gaussian", "sigma_p": "1m"},
                             search={"d_lo": "20um", "d_hi": "30um"},
                             sweep={"kind": "thickness", "L_values": ["100nm"]})
        with pytest.raises(SystemExit) as excinfo:
            main(["sweep", "--config", path, "--jobs", "1"])
        assert excinfo.value.code == EXIT_BRACKET
        frame = pd.read_csv(tmp_path / "sortie" / "essai_sweep_thickness.csv")
        assert frame.loc[0, "status"] == "BracketError"

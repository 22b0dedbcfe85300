import numpy as np
import pytest

from optics_core import OpticalConfig, OpticsDomainError, PumpProfile, UnsupportedProfileError, kz
from spdc_state import (
    JointAmplitudeMap,
    Representation,
    angular_grid,
    angular_probability_map,
    joint_angular_amplitude,
    joint_momentum_amplitude,
    momentum_grid,
    momentum_probability_map,
    signal_angle_cutoff,
    signal_marginal,
    signal_mass_beyond,
)


@pytest.fixture
def degenerate_thin():
    return OpticalConfig.from_pump_signal(500e-9, 1000e-9, 3e-9, 3e-9)


@pytest.fixture
def ratio_08_thin():
    # λ_S/λ_I = 0.8 avec λ_P = 500 nm
    return OpticalConfig.from_pump_signal(500e-9, 900e-9, 3e-9, 3e-9)


class TestJointAngularAmplitude:
    def test_phase_matched_centre(self, degenerate_thin):
        value = joint_angular_amplitude(0.0, 0.0, degenerate_thin, PumpProfile.gaussian(10e-6), 3e-9)
        assert abs(value) == pytest.approx(1.0, abs=1e-12)

    def test_maximal_signal_angle_ridge_point(self, ratio_08_thin):
        pump = PumpProfile.gaussian(10e-6)
        theta_s = -np.arcsin(ratio_08_thin.lambda_signal / ratio_08_thin.lambda_idler)
        value = joint_angular_amplitude(theta_s, np.pi / 2, ratio_08_thin, pump, 3e-9)
        assert abs(value) == pytest.approx(1.0, abs=1e-4)

    def test_beyond_signal_cutoff_vanishes_for_narrow_pump(self, anchor_cfg):
        pump = PumpProfile.gaussian(100e-6)
        theta_i = np.linspace(-np.pi / 2, np.pi / 2, 721)
        values = joint_angular_amplitude(np.radians(4.0), theta_i, anchor_cfg, pump, 100e-9)
        assert np.max(np.abs(values)) < 1e-10

    def test_plane_wave_rejected(self, anchor_cfg):
        with pytest.raises(UnsupportedProfileError):
            joint_angular_amplitude(0.0, 0.0, anchor_cfg, PumpProfile.plane_wave(), 0.0)

    def test_degenerate_exchange_symmetry(self, degenerate_thin):
        pump = PumpProfile.gaussian(10e-6)
        rng = np.random.default_rng(11)
        a = rng.uniform(-np.pi / 2, np.pi / 2, 200)
        b = rng.uniform(-np.pi / 2, np.pi / 2, 200)
        np.testing.assert_allclose(np.abs(joint_angular_amplitude(a, b, degenerate_thin, pump, 20e-6)),
                                   np.abs(joint_angular_amplitude(b, a, degenerate_thin, pump, 20e-6)),
                                   atol=1e-12)

    def test_parity(self, anchor_cfg):
        pump = PumpProfile.gaussian(30e-6)
        a = np.linspace(-0.05, 0.05, 17)
        b = np.linspace(-1.2, 1.2, 17)
        np.testing.assert_allclose(np.abs(joint_angular_amplitude(a, b, anchor_cfg, pump, 1e-6)),
                                   np.abs(joint_angular_amplitude(-a, -b, anchor_cfg, pump, 1e-6)),
                                   atol=1e-14)


class TestJointMomentumAmplitude:
    def test_outside_rectangle_is_zero(self, anchor_cfg):
        pump = PumpProfile.gaussian(100e-6)
        assert joint_momentum_amplitude(1.01 * anchor_cfg.k_signal, 0.0, anchor_cfg, pump, 1e-6) == 0
        assert joint_momentum_amplitude(0.0, -1.5 * anchor_cfg.k_idler, anchor_cfg, pump, 1e-6) == 0

    def test_rectangle_edge_raises(self, anchor_cfg):
        with pytest.raises(OpticsDomainError):
            joint_momentum_amplitude(anchor_cfg.k_signal, 0.0, anchor_cfg, PumpProfile.gaussian(1e-5), 1e-6)

    def test_centre_value(self):
        cfg = OpticalConfig.from_pump_signal(500e-9, 1000e-9, 0.0, 0.0)
        value = joint_momentum_amplitude(0.0, 0.0, cfg, PumpProfile.gaussian(10e-6), 0.0)
        assert abs(value) == pytest.approx(1000e-9 / (2 * np.pi), rel=1e-12)

    def test_matches_angular_form_with_jacobian(self, anchor_cfg):
        pump = PumpProfile.gaussian(20e-6)
        L = 2e-6
        rng = np.random.default_rng(7)
        theta_i = rng.uniform(-1.4, 1.4, 100)
        # au voisinage de la crête de pompe pour que les amplitudes ne soient pas nulles
        sin_s = np.clip(-anchor_cfg.k_idler * np.sin(theta_i) / anchor_cfg.k_signal
                        + rng.normal(0.0, 1e-3, 100), -0.99, 0.99)
        theta_s = np.arcsin(sin_s)
        q_s = anchor_cfg.k_signal * np.sin(theta_s)
        q_i = anchor_cfg.k_idler * np.sin(theta_i)
        momentum = np.abs(joint_momentum_amplitude(q_s, q_i, anchor_cfg, pump, L)) ** 2
        momentum *= kz(q_s, anchor_cfg.lambda_signal) * kz(q_i, anchor_cfg.lambda_idler)
        angular = np.abs(joint_angular_amplitude(theta_s, theta_i, anchor_cfg, pump, L)) ** 2
        mask = angular > 1e-200
        np.testing.assert_allclose(momentum[mask], angular[mask], rtol=1e-10)


class TestSignalAngleCutoff:
    def test_anchor(self):
        assert np.degrees(signal_angle_cutoff(530e-9, 10e-6)) == pytest.approx(3.04, abs=0.01)

    def test_degenerate_and_swapped(self):
        assert signal_angle_cutoff(1e-6, 1e-6) == pytest.approx(np.pi / 2)
        assert signal_angle_cutoff(10e-6, 530e-9) == pytest.approx(np.pi / 2)

    def test_non_positive(self):
        with pytest.raises(OpticsDomainError):
            signal_angle_cutoff(0.0, 1e-6)


class TestProbabilityMaps:
    def test_peak_normalized(self, degenerate_thin):
        axis_s, axis_i = angular_grid(129, 129)
        amap = angular_probability_map(axis_s, axis_i, degenerate_thin, PumpProfile.gaussian(10e-6), 3e-9)
        assert amap.values.max() == pytest.approx(1.0)
        assert amap.representation == Representation.ANGULAR
        assert np.all(np.isfinite(amap.values))

    def test_thin_degenerate_fills_whole_band(self, degenerate_thin):
        axis_s, axis_i = angular_grid(181, 181)
        amap = angular_probability_map(axis_s, axis_i, degenerate_thin, PumpProfile.gaussian(10e-6), 3e-9)
        # sur l'anti-diagonale θ_I = -θ_S, la probabilité reste proche du pic jusqu'à ±80°
        diagonal = amap.values[np.arange(181), np.arange(181)[::-1]]
        band = np.abs(axis_s) <= np.radians(80.0)
        assert diagonal[band].min() > 0.9

    def test_signal_support_truncated(self, ratio_08_thin):
        axis_s, axis_i = angular_grid(361, 361)
        amap = angular_probability_map(axis_s, axis_i, ratio_08_thin, PumpProfile.gaussian(10e-6), 3e-9)
        cutoff = signal_angle_cutoff(ratio_08_thin.lambda_signal, ratio_08_thin.lambda_idler)
        assert signal_mass_beyond(amap, cutoff + np.radians(5.0)) < 1e-3

    def test_thick_crystal_narrows_support(self):
        thin = OpticalConfig.from_pump_signal(500e-9, 1000e-9, 3e-9, 3e-9)
        thick = thin.with_thickness(20e-6)
        pump = PumpProfile.gaussian(10e-6)
        axis_s, axis_i = angular_grid(181, 181)
        wide = signal_marginal(angular_probability_map(axis_s, axis_i, thin, pump, 3e-9))[1]
        narrow = signal_marginal(angular_probability_map(axis_s, axis_i, thick, pump, 20e-6))[1]
        outer = np.abs(axis_s) > np.radians(30.0)
        assert narrow[outer].sum() < 0.1 * wide[outer].sum()

    def test_anchor_signal_cutoff_mass(self, anchor_cfg):
        axis_s = np.linspace(-np.radians(6.0), np.radians(6.0), 2048)
        axis_i = np.linspace(-np.pi / 2, np.pi / 2, 2048)
        amap = angular_probability_map(axis_s, axis_i, anchor_cfg, PumpProfile.gaussian(100e-6), 100e-9)
        assert signal_mass_beyond(amap, np.radians(3.3)) < 1e-3

    def test_momentum_map_interior(self, anchor_cfg):
        axis_s, axis_i = momentum_grid(anchor_cfg, 64, 64)
        assert axis_s.max() < anchor_cfg.k_signal and axis_i.max() < anchor_cfg.k_idler
        amap = momentum_probability_map(axis_s, axis_i, anchor_cfg, PumpProfile.gaussian(50e-6), 1e-6)
        assert amap.representation == Representation.MOMENTUM
        assert amap.values.max() == pytest.approx(1.0)

    def test_plane_wave_map_rejected(self, anchor_cfg):
        axis_s, axis_i = angular_grid(8, 8)
        with pytest.raises(UnsupportedProfileError):
            angular_probability_map(axis_s, axis_i, anchor_cfg, PumpProfile.plane_wave(), 0.0)

    def test_map_axes_validated(self):
        with pytest.raises(ValueError):
            JointAmplitudeMap(np.array([0.0, -0.1]), np.array([0.0, 0.1]), np.zeros((2, 2)), Representation.ANGULAR)
        with pytest.raises(ValueError):
            JointAmplitudeMap(np.array([0.0, 2.0]), np.array([0.0, 0.1]), np.zeros((2, 2)), Representation.ANGULAR)

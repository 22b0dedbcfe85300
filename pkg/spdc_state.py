"""
Amplitudes conjointes à deux photons d'une source SPDC unique, en représentation
impulsion transverse et en représentation angulaire, et cartes de probabilité associées.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Tuple

import numpy as np

from optics_core import (
    OpticalConfig,
    OpticsDomainError,
    PumpProfile,
    UnsupportedProfileError,
    kz_clipped,
    phase_mismatch_from_momenta,
    phase_mismatch_sinc,
    pump_envelope,
)

DEFAULT_MAP_POINTS = 512


class Representation(str, Enum):
    ANGULAR = "angular"
    MOMENTUM = "momentum"


@dataclass
class JointAmplitudeMap:
    axis_s: np.ndarray
    axis_i: np.ndarray
    values: np.ndarray
    representation: Representation
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("axis_s", "axis_i"):
            axis = getattr(self, name)
            if axis.ndim != 1 or axis.size < 2 or np.any(np.diff(axis) <= 0):
                raise ValueError(f"L'axe {name} doit être strictement croissant")
        if self.values.shape != (self.axis_s.size, self.axis_i.size):
            raise ValueError(f"Forme des valeurs {self.values.shape} incompatible avec les axes")
        if self.representation == Representation.ANGULAR:
            limit = np.pi / 2 + 1e-12
            if np.abs(self.axis_s).max() > limit or np.abs(self.axis_i).max() > limit:
                raise ValueError("Les axes angulaires doivent rester dans [-π/2, π/2]")


def _require_gaussian(pump: PumpProfile):
    if not pump.is_gaussian:
        raise UnsupportedProfileError(
            "Amplitude ponctuelle indéfinie pour une pompe en onde plane (voir imaging_engine.image_plane_wave)"
        )


def joint_angular_amplitude(theta_s, theta_i, cfg: OpticalConfig, pump: PumpProfile, L: float):
    """φ(θ_S, θ_I) = E_P[k_S sin θ_S + k_I sin θ_I] · sinc(Δk_z L / 2)"""
    _require_gaussian(pump)
    theta_s = np.asarray(theta_s, dtype=float)
    theta_i = np.asarray(theta_i, dtype=float)
    q_sum = cfg.k_signal * np.sin(theta_s) + cfg.k_idler * np.sin(theta_i)
    amplitude = pump_envelope(q_sum, pump) * phase_mismatch_sinc(theta_s, theta_i, cfg, L)
    return np.asarray(amplitude, dtype=complex)


def joint_momentum_amplitude(q_s, q_i, cfg: OpticalConfig, pump: PumpProfile, L: float):
    """φ_q(q_S, q_I) = E_P(q_S + q_I) · Π · [k_zS k_zI]^(-1/2) dans le rectangle propagatif, 0 ailleurs"""
    _require_gaussian(pump)
    q_s = np.asarray(q_s, dtype=float)
    q_i = np.asarray(q_i, dtype=float)
    k_s, k_i = cfg.k_signal, cfg.k_idler
    on_edge = (np.abs(q_s) == k_s) | (np.abs(q_i) == k_i)
    if np.any(on_edge):
        raise OpticsDomainError("k_z = 0 sur le bord du rectangle propagatif : utiliser la forme angulaire")
    inside = (np.abs(q_s) < k_s) & (np.abs(q_i) < k_i)
    qs_in = np.where(inside, q_s, 0.0)
    qi_in = np.where(inside, q_i, 0.0)
    weight = 1.0 / np.sqrt(kz_clipped(qs_in, k_s) * kz_clipped(qi_in, k_i))
    amplitude = pump_envelope(qs_in + qi_in, pump) * phase_mismatch_from_momenta(qs_in, qi_in, cfg, L) * weight
    return np.where(inside, amplitude, 0.0).astype(complex)


def signal_angle_cutoff(lambda_s: float, lambda_i: float) -> float:
    if lambda_s <= 0 or lambda_i <= 0:
        raise OpticsDomainError("Longueurs d'onde non positives")
    return float(np.arcsin(min(1.0, lambda_s / lambda_i)))


def angular_grid(n_s: int = DEFAULT_MAP_POINTS, n_i: int = DEFAULT_MAP_POINTS,
                 theta_s_max: float = np.pi / 2, theta_i_max: float = np.pi / 2) -> Tuple[np.ndarray, np.ndarray]:
    return (np.linspace(-theta_s_max, theta_s_max, n_s),
            np.linspace(-theta_i_max, theta_i_max, n_i))


def momentum_grid(cfg: OpticalConfig, n_s: int = DEFAULT_MAP_POINTS,
                  n_i: int = DEFAULT_MAP_POINTS) -> Tuple[np.ndarray, np.ndarray]:
    """Axes strictement intérieurs au rectangle propagatif"""
    k_s, k_i = cfg.k_signal, cfg.k_idler
    return (np.linspace(-k_s, k_s, n_s + 2)[1:-1],
            np.linspace(-k_i, k_i, n_i + 2)[1:-1])


def _peak_normalized(probability: np.ndarray) -> Tuple[np.ndarray, float]:
    peak = float(probability.max())
    if peak <= 0:
        logging.warning("⚠️ Carte de probabilité identiquement nulle sur la grille")
        return probability, 0.0
    return probability / peak, peak


def angular_probability_map(axis_s: np.ndarray, axis_i: np.ndarray, cfg: OpticalConfig,
                            pump: PumpProfile, L: float) -> JointAmplitudeMap:
    """|φ(θ_S, θ_I)|² échantillonnée puis normalisée à 1 en son pic"""
    _require_gaussian(pump)
    amplitude = joint_angular_amplitude(axis_s[:, None], axis_i[None, :], cfg, pump, L)
    probability, peak = _peak_normalized(np.abs(amplitude) ** 2)
    logging.info(f"📊 Carte angulaire {axis_s.size}x{axis_i.size} calculée (L={L:.3e} m)")
    return JointAmplitudeMap(
        axis_s=np.asarray(axis_s, dtype=float),
        axis_i=np.asarray(axis_i, dtype=float),
        values=probability,
        representation=Representation.ANGULAR,
        meta={"config": cfg.to_dict(), "pump": pump.to_dict(), "L": L,
              "normalization": {"kind": "peak", "peak_value": peak}},
    )


def momentum_probability_map(axis_s: np.ndarray, axis_i: np.ndarray, cfg: OpticalConfig,
                             pump: PumpProfile, L: float) -> JointAmplitudeMap:
    _require_gaussian(pump)
    amplitude = joint_momentum_amplitude(axis_s[:, None], axis_i[None, :], cfg, pump, L)
    probability, peak = _peak_normalized(np.abs(amplitude) ** 2)
    return JointAmplitudeMap(
        axis_s=np.asarray(axis_s, dtype=float),
        axis_i=np.asarray(axis_i, dtype=float),
        values=probability,
        representation=Representation.MOMENTUM,
        meta={"config": cfg.to_dict(), "pump": pump.to_dict(), "L": L,
              "normalization": {"kind": "peak", "peak_value": peak}},
    )


def signal_marginal(amap: JointAmplitudeMap) -> Tuple[np.ndarray, np.ndarray]:
    """Distribution marginale du photon signal, intégrée sur l'axe idler et normalisée à 1"""
    marginal = np.trapezoid(amap.values, amap.axis_i, axis=1)
    total = np.trapezoid(marginal, amap.axis_s)
    if total <= 0:
        return amap.axis_s, marginal
    return amap.axis_s, marginal / total


def signal_mass_beyond(amap: JointAmplitudeMap, theta_limit: float) -> float:
    """Fraction de la probabilité portée par |θ_S| > theta_limit"""
    axis, marginal = signal_marginal(amap)
    outside = np.abs(axis) > theta_limit
    total = np.trapezoid(marginal, axis)
    if total <= 0:
        return 0.0
    return float(np.trapezoid(np.where(outside, marginal, 0.0), axis) / total)

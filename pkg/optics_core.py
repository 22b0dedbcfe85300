"""
Grandeurs d'optique ondulatoire partagées par tous les modules :
vecteurs d'onde, désaccord de phase, enveloppe de pompe, conservation de l'énergie.

Toutes les longueurs sont en mètres et les angles en radians ; les suffixes
d'unités ne sont gérés que par la couche de configuration (file_utils).
"""

import logging
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Dict, Optional

import numpy as np

from config import DEFAULT_N_THETA, DEFAULT_N_REFINE_MAX, DEFAULT_REL_TOL, MIN_N_THETA

ENERGY_REL_TOL = 1e-12
SINC_SERIES_LIMIT = 1e-4


class OpticsDomainError(ValueError):
    """Paramètre physique hors de son domaine de définition"""


class UnsupportedProfileError(ValueError):
    """Profil de pompe non pris en charge par l'opération demandée"""


def wavenumber(wavelength: float) -> float:
    return 2.0 * np.pi / wavelength


@dataclass(frozen=True)
class OpticalConfig:
    """Longueurs d'onde dans le vide (pompe, signal, idler) et épaisseurs des cristaux A et B.

    L = 0 code la limite exacte de source mince (terme sinc identiquement égal à 1).
    """
    lambda_pump: float
    lambda_signal: float
    lambda_idler: float
    L_A: float
    L_B: float

    def __post_init__(self):
        for name in ("lambda_pump", "lambda_signal", "lambda_idler"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise OpticsDomainError(f"{name} doit être strictement positif (reçu {value})")
        for name in ("L_A", "L_B"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise OpticsDomainError(f"{name} doit être positif ou nul (reçu {value})")
        inv_pump = 1.0 / self.lambda_pump
        mismatch = inv_pump - 1.0 / self.lambda_signal - 1.0 / self.lambda_idler
        if abs(mismatch) > ENERGY_REL_TOL * inv_pump:
            raise OpticsDomainError(
                f"Conservation de l'énergie violée : 1/λ_P - 1/λ_S - 1/λ_I = {mismatch:.3e} m⁻¹"
            )

    @classmethod
    def from_pump_signal(cls, lambda_pump: float, lambda_signal: float,
                         L_A: float, L_B: float) -> "OpticalConfig":
        return cls(lambda_pump, lambda_signal, idler_wavelength(lambda_pump, lambda_signal), L_A, L_B)

    @classmethod
    def from_signal_idler(cls, lambda_signal: float, lambda_idler: float,
                          L_A: float, L_B: float) -> "OpticalConfig":
        if lambda_signal <= 0 or lambda_idler <= 0:
            raise OpticsDomainError("Les longueurs d'onde signal et idler doivent être positives")
        lambda_pump = 1.0 / (1.0 / lambda_signal + 1.0 / lambda_idler)
        return cls(lambda_pump, lambda_signal, lambda_idler, L_A, L_B)

    def with_thickness(self, L_A: float, L_B: Optional[float] = None) -> "OpticalConfig":
        return OpticalConfig(self.lambda_pump, self.lambda_signal, self.lambda_idler,
                             L_A, L_A if L_B is None else L_B)

    @property
    def k_pump(self) -> float:
        return wavenumber(self.lambda_pump)

    @property
    def k_signal(self) -> float:
        return wavenumber(self.lambda_signal)

    @property
    def k_idler(self) -> float:
        return wavenumber(self.lambda_idler)

    @property
    def k_min(self) -> float:
        return min(self.k_signal, self.k_idler)

    @property
    def lambda_max(self) -> float:
        return max(self.lambda_signal, self.lambda_idler)

    def to_dict(self) -> Dict:
        return asdict(self)


class PumpKind(str, Enum):
    PLANE_WAVE = "plane_wave"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class PumpProfile:
    kind: PumpKind
    sigma_p: Optional[float] = None

    def __post_init__(self):
        if self.kind == PumpKind.GAUSSIAN:
            if self.sigma_p is None or not np.isfinite(self.sigma_p) or self.sigma_p <= 0:
                raise OpticsDomainError(f"sigma_p doit être strictement positif pour une pompe gaussienne (reçu {self.sigma_p})")

    @classmethod
    def gaussian(cls, sigma_p: float) -> "PumpProfile":
        return cls(PumpKind.GAUSSIAN, sigma_p)

    @classmethod
    def plane_wave(cls) -> "PumpProfile":
        return cls(PumpKind.PLANE_WAVE)

    @property
    def is_gaussian(self) -> bool:
        return self.kind == PumpKind.GAUSSIAN

    def to_dict(self) -> Dict:
        return {"kind": self.kind.value, "sigma_p": self.sigma_p}


@dataclass(frozen=True)
class QuadratureSpec:
    """Nombre de nœuds par axe angulaire et critère de raffinement (doublement de n)"""
    n_theta: int = DEFAULT_N_THETA
    n_refine_max: int = DEFAULT_N_REFINE_MAX
    rel_tol: float = DEFAULT_REL_TOL

    def __post_init__(self):
        if int(self.n_theta) != self.n_theta or self.n_theta < MIN_N_THETA:
            raise OpticsDomainError(f"n_theta doit être un entier >= {MIN_N_THETA} (reçu {self.n_theta})")
        if int(self.n_refine_max) != self.n_refine_max or self.n_refine_max < 1:
            raise OpticsDomainError(f"n_refine_max doit être un entier positif (reçu {self.n_refine_max})")
        if not (0 < self.rel_tol <= 1e-2):
            raise OpticsDomainError(f"rel_tol doit appartenir à ]0, 1e-2] (reçu {self.rel_tol})")

    def to_dict(self) -> Dict:
        return asdict(self)


def kz(q, wavelength: float):
    """Nombre d'onde longitudinal sqrt((2π/λ)² - q²), nul exactement à |q| = 2π/λ"""
    k = wavenumber(wavelength)
    q = np.asarray(q, dtype=float)
    excess = np.abs(q) - k
    if np.any(excess > ENERGY_REL_TOL * k):
        raise OpticsDomainError(f"Onde évanescente : |q| > 2π/λ = {k:.6e} m⁻¹")
    value = np.sqrt(np.clip(k * k - q * q, 0.0, None))
    return value if value.ndim else float(value)


def kz_clipped(q, k: float):
    """Variante interne sans contrôle : les appelants ont déjà restreint q au domaine propagatif"""
    q = np.asarray(q, dtype=float)
    return np.sqrt(np.clip(k * k - q * q, 0.0, None))


def idler_wavelength(lambda_pump: float, lambda_signal: float) -> float:
    if lambda_pump <= 0 or lambda_signal <= lambda_pump:
        raise OpticsDomainError(
            f"λ_S ({lambda_signal}) doit être supérieure à λ_P ({lambda_pump}) : fréquence idler non positive"
        )
    return 1.0 / (1.0 / lambda_pump - 1.0 / lambda_signal)


def pump_envelope(q_p, pump: PumpProfile):
    """E_P(q_P) = exp(-σ_P² q_P² / 2)"""
    if not pump.is_gaussian:
        raise UnsupportedProfileError("L'enveloppe ponctuelle n'existe que pour une pompe gaussienne")
    q_p = np.asarray(q_p, dtype=float)
    value = np.exp(-0.5 * (pump.sigma_p * q_p) ** 2)
    return value if value.ndim else float(value)


def sinc(x):
    """sin(x)/x avec développement limité près de 0"""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SINC_SERIES_LIMIT
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x * x / 6.0, np.sin(safe) / safe)


def phase_mismatch_from_momenta(q_s, q_i, cfg: OpticalConfig, L: float):
    """Π en représentation impulsion ; q_s, q_i supposés dans le rectangle propagatif"""
    q_s = np.asarray(q_s, dtype=float)
    q_i = np.asarray(q_i, dtype=float)
    q_sum = q_s + q_i
    k_p = cfg.k_pump
    propagating = np.abs(q_sum) <= k_p * (1.0 + ENERGY_REL_TOL)
    if L == 0:
        return np.where(propagating, 1.0, 0.0)
    delta = kz_clipped(q_sum, k_p) - kz_clipped(q_s, cfg.k_signal) - kz_clipped(q_i, cfg.k_idler)
    return np.where(propagating, sinc(0.5 * L * delta), 0.0)


def phase_mismatch_sinc(theta_s, theta_i, cfg: OpticalConfig, L: float):
    """Π(θ_S, θ_I, L) = sinc{(L/2)[k_zP - k_S cos θ_S - k_I cos θ_I]}

    La composante de pompe évanescente (|q_S + q_I| > 2π/λ_P) est mise à zéro.
    """
    if L < 0:
        raise OpticsDomainError(f"Épaisseur négative : {L}")
    theta_s = np.asarray(theta_s, dtype=float)
    theta_i = np.asarray(theta_i, dtype=float)
    k_s, k_i, k_p = cfg.k_signal, cfg.k_idler, cfg.k_pump
    q_sum = k_s * np.sin(theta_s) + k_i * np.sin(theta_i)
    propagating = np.abs(q_sum) <= k_p * (1.0 + ENERGY_REL_TOL)
    if L == 0:
        value = np.where(propagating, 1.0, 0.0)
    else:
        delta = kz_clipped(q_sum, k_p) - k_s * np.cos(theta_s) - k_i * np.cos(theta_i)
        value = np.where(propagating, sinc(0.5 * L * delta), 0.0)
    return value if value.ndim else float(value)


def log_config(cfg: OpticalConfig, pump: PumpProfile):
    width = f"σ_P={pump.sigma_p:.3e} m" if pump.is_gaussian else "onde plane"
    logging.info(
        f"λ_P={cfg.lambda_pump:.4e} m, λ_S={cfg.lambda_signal:.4e} m, λ_I={cfg.lambda_idler:.4e} m, "
        f"L_A={cfg.L_A:.3e} m, L_B={cfg.L_B:.3e} m, {width}"
    )

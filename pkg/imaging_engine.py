"""
Formation d'image en imagerie quantique à photons non détectés (QIUP).

L'objet (fentes delta) est placé sur le bras idler entre les sources A et B ;
l'image est portée par le terme d'interférence
    I(x_S) ∝ ∫ dx_I Re[Φ_A*(x_S, x_I) Φ_BT(x_S, x_I)]
que l'on évalue :
  - sous forme réduite (intégrale sur x_I faite analytiquement), chemin nominal ;
  - sous forme directe (intégrale sur x_I numérique), oracle de validation ;
  - en limite onde plane, par le chemin analytique en impulsion.

Toutes les intégrales internes sur un angle contraint par la pompe gaussienne sont
restreintes à la fenêtre |q_S + q_I| <= W, W = min(9/σ_P, 2π/λ_P), ce qui permet
d'intégrer exactement le substitut σ_P = 1 m de l'onde plane.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import (
    DEFAULT_SLIT_WEIGHT,
    DIRECT_BOUNDARY_RATIO,
    DIRECT_WINDOW_CAP_WAVELENGTHS,
    MAX_WORKERS_CPU,
    PUMP_WINDOW_SIGMAS,
    X_CHUNK_ELEMENTS,
)
from optics_core import (
    OpticalConfig,
    PumpProfile,
    QuadratureSpec,
    UnsupportedProfileError,
    kz_clipped,
    phase_mismatch_from_momenta,
    phase_mismatch_sinc,
    pump_envelope,
    sinc,
)
from quadrature import GaussLegendreRule, auto_node_count, max_norm_difference, momentum_window_to_angles

DEGENERACY_TOL = 1e-9
FWHM_TO_SIGMA = 2.355


class QuadratureConvergenceError(RuntimeError):
    """Plafond de raffinement atteint ; porte la tolérance effectivement obtenue"""

    def __init__(self, message: str, achieved_tol: float, n_theta: int):
        super().__init__(message)
        self.achieved_tol = achieved_tol
        self.n_theta = n_theta


class WindowTooSmallError(RuntimeError):
    def __init__(self, message: str, diagnostics: Dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class MalformedProfileError(ValueError):
    """Profil d'image inexploitable (axe vide, maximum non positif)"""


class SlitKind(str, Enum):
    DOUBLE_SLIT = "double_slit"
    SINGLE_SLIT = "single_slit"


@dataclass(frozen=True)
class SlitObject:
    """Fentes infiniment fines : T(x) = w[δ(x - d/2) + δ(x + d/2)] ou T(x) = w δ(x).

    w (m) est le poids intégré de chaque fente ; il fixe l'échelle commune du fond
    et du terme d'interférence. w = 0 décrit l'objet opaque.
    """
    kind: SlitKind
    separation_d: Optional[float] = None
    transmission_weight: float = DEFAULT_SLIT_WEIGHT

    def __post_init__(self):
        if self.kind == SlitKind.DOUBLE_SLIT:
            if self.separation_d is None or not np.isfinite(self.separation_d) or self.separation_d <= 0:
                raise ValueError(f"separation_d doit être strictement positif pour une double fente (reçu {self.separation_d})")
        if not np.isfinite(self.transmission_weight) or self.transmission_weight < 0:
            raise ValueError(f"transmission_weight doit être positif ou nul (reçu {self.transmission_weight})")

    @classmethod
    def double_slit(cls, d: float, transmission_weight: float = DEFAULT_SLIT_WEIGHT) -> "SlitObject":
        return cls(SlitKind.DOUBLE_SLIT, d, transmission_weight)

    @classmethod
    def single_slit(cls, transmission_weight: float = DEFAULT_SLIT_WEIGHT) -> "SlitObject":
        return cls(SlitKind.SINGLE_SLIT, None, transmission_weight)

    @classmethod
    def opaque(cls) -> "SlitObject":
        return cls(SlitKind.SINGLE_SLIT, None, 0.0)

    @property
    def positions(self) -> np.ndarray:
        if self.kind == SlitKind.DOUBLE_SLIT:
            return np.array([-0.5 * self.separation_d, 0.5 * self.separation_d])
        return np.zeros(1)

    @property
    def extent(self) -> float:
        return float(np.max(np.abs(self.positions)))

    def to_dict(self) -> Dict:
        return {"kind": self.kind.value, "separation_d": self.separation_d,
                "transmission_weight": self.transmission_weight}


@dataclass
class ImageProfile:
    """Image échantillonnée sur l'axe caméra x_S.

    values = I / peak et background = B / peak avec le même facteur, de sorte que
    background ± 2·values est le taux de comptage normalisé de chaque port de sortie.
    """
    x_axis: np.ndarray
    values: np.ndarray
    background: Optional[np.ndarray] = None
    meta: Dict = field(default_factory=dict)

    def port_rates(self) -> Tuple[np.ndarray, np.ndarray]:
        """(η = -π/2 constructif, η = +π/2 destructif)"""
        if self.background is None:
            raise MalformedProfileError("Pas de fond : utiliser counting_rate")
        return self.background + 2.0 * self.values, self.background - 2.0 * self.values

    @property
    def raw_values(self) -> np.ndarray:
        return self.values * self.meta.get("normalization", {}).get("peak", 1.0)


class CorrelationKind(str, Enum):
    A = "A"
    BT = "BT"


def _require_gaussian(pump: PumpProfile, operation: str):
    if not pump.is_gaussian:
        raise UnsupportedProfileError(
            f"{operation} nécessite une pompe gaussienne (substitut σ_P = 1 m ou image_plane_wave)"
        )


def _check_axis(x_axis) -> np.ndarray:
    x = np.asarray(x_axis, dtype=float).ravel()
    if x.size == 0:
        raise MalformedProfileError("Axe x_S vide")
    if not np.all(np.isfinite(x)):
        raise MalformedProfileError("Axe x_S non fini")
    return x


def pump_window(cfg: OpticalConfig, pump: PumpProfile) -> float:
    """Demi-largeur W de la fenêtre |q_P| <= W hors de laquelle E_P est numériquement nul"""
    return min(PUMP_WINDOW_SIGMAS / pump.sigma_p, cfg.k_pump)


def idler_axis(cfg: OpticalConfig, window: float, rule: GaussLegendreRule) -> Tuple[np.ndarray, np.ndarray]:
    """Nœuds externes en θ_I.

    Quand k_I > k_S, le champ H_A porte la singularité intégrable 1/k_zS(q_I) en
    |q_I| = k_S : le panneau central utilise k_I sin θ_I = k_S sin ψ et les queues
    couvrent |q_I| ∈ [k_S, k_S + W].
    """
    k_s, k_i = cfg.k_signal, cfg.k_idler
    if k_i > k_s * (1.0 + DEGENERACY_TOL):
        psi, w_psi = rule.on_interval(-np.pi / 2, np.pi / 2)
        theta = np.arcsin(k_s * np.sin(psi) / k_i)
        weights = w_psi * k_s * np.cos(psi) / (k_i * np.cos(theta))
        edge = np.arcsin(k_s / k_i)
        outer = np.arcsin(min(1.0, (k_s + window) / k_i))
        nodes, wts = [theta], [weights]
        if outer > edge:
            t, w = rule.on_interval(edge, outer)
            nodes += [-t[::-1], t]
            wts += [w[::-1], w]
        return np.concatenate(nodes), np.concatenate(wts)
    return rule.on_interval(-np.pi / 2, np.pi / 2)


def signal_axis(cfg: OpticalConfig, window: float, rule: GaussLegendreRule) -> Tuple[np.ndarray, np.ndarray]:
    """Nœuds externes en θ_S, coupés aux bords |q_S| = k_I ± W du support de G quand k_S > k_I"""
    k_s, k_i = cfg.k_signal, cfg.k_idler
    if k_s > k_i * (1.0 + DEGENERACY_TOL):
        inner = float(np.arcsin(np.clip((k_i - window) / k_s, 0.0, 1.0)))
        outer = float(np.arcsin(min(1.0, (k_i + window) / k_s)))
        edges = [-outer, -inner, inner, outer] if inner > 0 else [-outer, outer]
        return rule.on_panels(edges)
    return rule.on_interval(-np.pi / 2, np.pi / 2)


def _slit_transfer(theta_s: np.ndarray, cfg: OpticalConfig, pump: PumpProfile, L_B: float,
                   positions: np.ndarray, rule: GaussLegendreRule, window: float) -> np.ndarray:
    """G_j(θ_S) = ∫dθ'_I k_I cos θ'_I e^{-i q'_I x_j} E_P Π_B, une ligne par fente"""
    k_i = cfg.k_idler
    q_s = cfg.k_signal * np.sin(theta_s)
    lo, hi = momentum_window_to_angles(-window - q_s, window - q_s, k_i)
    t, wt = rule.on_windows(lo, hi)
    q_t = k_i * np.sin(t)
    base = (wt * k_i * np.cos(t)
            * pump_envelope(q_s[:, None] + q_t, pump)
            * phase_mismatch_sinc(theta_s[:, None], t, cfg, L_B))
    return np.stack([np.sum(base * np.exp(-1j * q_t * x_j), axis=1) for x_j in positions])


class ImagingKernel:
    """Nœuds et intégrandes internes précalculés pour une configuration et n nœuds par axe.

    Notation des tableaux : i indexe θ_I externe, k le nœud interne, j la fente, x l'axe caméra.
    """

    def __init__(self, cfg: OpticalConfig, pump: PumpProfile, obj: SlitObject,
                 L_A: float, L_B: float, n: int, n_idler: Optional[int] = None):
        _require_gaussian(pump, "Le noyau d'imagerie")
        self.cfg = cfg
        self.pump = pump
        self.obj = obj
        self.L_A = L_A
        self.L_B = L_B
        self.n = int(n)
        self.n_idler = int(n_idler or n)
        self.window = pump_window(cfg, pump)
        self.positions = obj.positions

        rule = GaussLegendreRule(self.n)
        self.theta_i, self.w_i = idler_axis(cfg, self.window, GaussLegendreRule(self.n_idler))
        self.q_i = cfg.k_idler * np.sin(self.theta_i)
        self._build_signal_inner(rule)

        self.theta_s, self.w_s = signal_axis(cfg, self.window, rule)
        self.q_s = cfg.k_signal * np.sin(self.theta_s)
        self.transfer = _slit_transfer(self.theta_s, cfg, pump, L_B, self.positions, rule, self.window)

    def _build_signal_inner(self, rule: GaussLegendreRule):
        k_s = self.cfg.k_signal
        lo, hi = momentum_window_to_angles(-self.window - self.q_i, self.window - self.q_i, k_s)
        s, ws = rule.on_windows(lo, hi)
        self.inner_q_s = k_s * np.sin(s)
        envelope = ws * pump_envelope(self.inner_q_s + self.q_i[:, None], self.pump)
        th_i = self.theta_i[:, None]
        self.inner_A = envelope * phase_mismatch_sinc(s, th_i, self.cfg, self.L_A)
        self.inner_B = envelope * phase_mismatch_sinc(s, th_i, self.cfg, self.L_B)

    def chunk_length(self) -> int:
        return max(1, X_CHUNK_ELEMENTS // max(1, self.inner_q_s.size))

    def idler_fields(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """H_A(θ_I, x) et H_B(θ_I, x) = ∫dθ'_S E_P Π e^{i k_S sin θ'_S x}"""
        phase = np.exp(1j * self.inner_q_s[:, :, None] * x[None, None, :])
        h_a = np.einsum('ik,ikx->ix', self.inner_A, phase)
        h_b = np.einsum('ik,ikx->ix', self.inner_B, phase)
        return h_a, h_b

    def signal_transfer(self, x: np.ndarray) -> np.ndarray:
        """A_j(x) = ∫dθ_S G_j(θ_S) e^{i k_S sin θ_S x}"""
        return (self.transfer * self.w_s) @ np.exp(1j * np.outer(self.q_s, x))

    def object_field(self, x: np.ndarray) -> np.ndarray:
        """F(θ_I, x) = ∫dθ_S conv(θ_S, θ_I) e^{i k_S sin θ_S x}"""
        slit_phase = np.exp(1j * np.outer(self.q_i, self.positions))
        return self.obj.transmission_weight * (slit_phase @ self.signal_transfer(x))

    def _evaluate_chunk(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        h_a, h_b = self.idler_fields(x)
        transfer = self.signal_transfer(x)
        slit_phase = np.exp(1j * np.outer(self.positions, self.q_i)) * self.w_i
        paired = slit_phase @ np.conj(h_a)
        interference = self.obj.transmission_weight * np.real(np.sum(transfer * paired, axis=0))
        background = self.w_i @ (np.abs(h_a) ** 2 + np.abs(h_b) ** 2)
        return interference, background

    def _chunks(self, x: np.ndarray) -> List[np.ndarray]:
        size = self.chunk_length()
        return [x[start:start + size] for start in range(0, x.size, size)]

    def evaluate(self, x: np.ndarray, jobs: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Terme d'interférence réduit et fond, calculés par blocs de x en parallèle"""
        chunks = self._chunks(x)
        workers = max(1, min(jobs or MAX_WORKERS_CPU, len(chunks)))
        if workers == 1:
            results = [self._evaluate_chunk(c) for c in chunks]
        else:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                results = list(executor.map(self._evaluate_chunk, chunks))
        interference = np.concatenate([r[0] for r in results])
        background = np.concatenate([r[1] for r in results])
        return interference, background

    def idler_amplitude(self) -> np.ndarray:
        cos_i = np.clip(np.cos(self.theta_i), 0.0, None)
        return self.w_i * np.sqrt(self.cfg.k_idler * cos_i)

    def correlation(self, which: CorrelationKind, x_s: np.ndarray, x_i: np.ndarray,
                    rows_per_block: int = 512) -> np.ndarray:
        """Φ(x_S, x_I) = ∫dθ_I [k_I cos θ_I]^{1/2} e^{i q_I x_I} (H_A ou F)(θ_I, x_S), forme [n_xS, n_xI]"""
        fields = []
        for chunk in self._chunks(x_s):
            fields.append(self.idler_fields(chunk)[0] if which == CorrelationKind.A else self.object_field(chunk))
        field_values = np.concatenate(fields, axis=1)
        amplitude = self.idler_amplitude()
        blocks = []
        for start in range(0, x_i.size, rows_per_block):
            rows = x_i[start:start + rows_per_block]
            blocks.append((np.exp(1j * np.outer(rows, self.q_i)) * amplitude) @ field_values)
        return np.concatenate(blocks, axis=0).T


def node_count(cfg: OpticalConfig, pump: PumpProfile, obj: SlitObject,
               x_axis: np.ndarray, n_theta: int) -> int:
    window = pump_window(cfg, pump) if pump.is_gaussian else 0.0
    k_band = cfg.k_min + window
    x_scale = float(np.max(np.abs(x_axis))) + obj.extent
    return auto_node_count(n_theta, k_band, x_scale)


def _refine(evaluate: Callable[[int], Tuple], n_start: int, quad: QuadratureSpec,
            what: str) -> Tuple[Tuple, int, float, List[Dict]]:
    """Double n jusqu'à un écart normalisé < rel_tol entre deux évaluations successives"""
    n = int(n_start)
    previous = evaluate(n)
    history: List[Dict] = []
    achieved = float("inf")
    for _ in range(quad.n_refine_max):
        n *= 2
        current = evaluate(n)
        achieved = max_norm_difference(previous[0], current[0])
        history.append({"n_theta": n, "difference": achieved})
        logging.info(f"🔁 {what} : n={n}, écart={achieved:.2e}")
        if achieved < quad.rel_tol:
            return current, n, achieved, history
        previous = current
    raise QuadratureConvergenceError(
        f"{what} : pas de convergence après {quad.n_refine_max} doublements "
        f"(écart {achieved:.2e} > {quad.rel_tol:.1e}, n={n})",
        achieved, n,
    )


def _normalize(interference: np.ndarray, background: Optional[np.ndarray]):
    """Division par le maximum ; un profil identiquement nul est renvoyé tel quel"""
    peak = float(np.max(interference))
    if peak <= 0:
        if np.any(interference != 0):
            raise MalformedProfileError(
                f"Maximum de l'image non positif ({peak:.3e}) : normalisation au pic impossible")
        return interference, background, 0.0
    scaled_background = None if background is None else background / peak
    return interference / peak, scaled_background, peak


def _run_meta(cfg: OpticalConfig, pump: PumpProfile, obj: SlitObject, L_A: float, L_B: float,
              diagnostics: Dict, started: float, peak: float, method: str) -> Dict:
    return {
        "method": method,
        "config": {**cfg.to_dict(), "L_A": L_A, "L_B": L_B},
        "pump": pump.to_dict(),
        "object": obj.to_dict(),
        "quadrature": diagnostics,
        "normalization": {"kind": "peak", "peak": peak},
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }


def _reduced_evaluation(x: np.ndarray, cfg: OpticalConfig, pump: PumpProfile, obj: SlitObject,
                        L_A: float, L_B: float, quad: QuadratureSpec, jobs: Optional[int],
                        fixed_n: Optional[int]) -> Tuple[np.ndarray, np.ndarray, Dict]:
    _require_gaussian(pump, "image_reduced")

    def evaluate(n: int):
        return ImagingKernel(cfg, pump, obj, L_A, L_B, n).evaluate(x, jobs)

    if fixed_n:
        interference, background = evaluate(fixed_n)
        diagnostics = {"n_theta_requested": quad.n_theta, "n_theta": int(fixed_n),
                       "achieved_tol": None, "fixed": True, "refinements": []}
        return interference, background, diagnostics

    n_start = node_count(cfg, pump, obj, x, quad.n_theta)
    (interference, background), n_final, achieved, history = _refine(evaluate, n_start, quad, "image réduite")
    diagnostics = {"n_theta_requested": quad.n_theta, "n_theta_start": n_start, "n_theta": n_final,
                   "achieved_tol": achieved, "fixed": False, "refinements": history}
    return interference, background, diagnostics


def image_reduced(x_axis, cfg: OpticalConfig, pump: PumpProfile, obj: SlitObject,
                  L_A: float, L_B: float, quad: QuadratureSpec,
                  jobs: Optional[int] = None, fixed_n: Optional[int] = None) -> ImageProfile:
    """Image par l'intégrale angulaire réduite, normalisée à 1 en son pic.

    Le poids |k_I cos θ_I|^{-1} est simplifié avec les deux facteurs [k_I cos θ_I]^{1/2}
    de φ_A et φ_BT avant intégration :
        I(x) = w Re Σ_j A_j(x) Σ_i W_i conj(H_A(θ_i, x)) e^{i q_I x_j}
    """
    started = time.perf_counter()
    x = _check_axis(x_axis)
    interference, _, diagnostics = _reduced_evaluation(x, cfg, pump, obj, L_A, L_B, quad, jobs, fixed_n)
    values, _, peak = _normalize(interference, None)
    meta = _run_meta(cfg, pump, obj, L_A, L_B, diagnostics, started, peak, "reduced")
    return ImageProfile(x_axis=x, values=values, meta=meta)


def counting_rate(x_axis, cfg: OpticalConfig, pump: PumpProfile, obj: SlitObject,
                  L_A: float, L_B: float, quad: QuadratureSpec,
                  jobs: Optional[int] = None, fixed_n: Optional[int] = None) -> ImageProfile:
    """Image et fond ∫dx_I(|Φ_A|² + |Φ_B|²) sur une échelle commune ; taux = fond ± 2·interférence"""
    started = time.perf_counter()
    x = _check_axis(x_axis)
    interference, background, diagnostics = _reduced_evaluation(x, cfg, pump, obj, L_A, L_B, quad, jobs, fixed_n)
    values, scaled_background, peak = _normalize(interference, background)
    meta = _run_meta(cfg, pump, obj, L_A, L_B, diagnostics, started, peak, "counting_rate")
    meta["ports"] = {"constructive": "eta = -pi/2 : fond + 2 I", "destructive": "eta = +pi/2 : fond - 2 I"}
    return ImageProfile(x_axis=x, values=values, background=scaled_background, meta=meta)


def conv_angular(theta_s, theta_i, obj: SlitObject, cfg: OpticalConfig, pump: PumpProfile,
                 L_B: float, quad: QuadratureSpec):
    """conv(θ_S, θ_I) = w Re Σ_j e^{i q_I x_j} G_j(θ_S) ; réel pour les objets centrés"""
    _require_gaussian(pump, "conv_angular")
    theta_s, theta_i = np.broadcast_arrays(np.asarray(theta_s, dtype=float), np.asarray(theta_i, dtype=float))
    shape = theta_s.shape
    flat_s, flat_i = theta_s.ravel(), theta_i.ravel()
    window = pump_window(cfg, pump)
    slit_phase = np.exp(1j * np.outer(obj.positions, cfg.k_idler * np.sin(flat_i)))

    def evaluate(n: int):
        transfer = _slit_transfer(flat_s, cfg, pump, L_B, obj.positions, GaussLegendreRule(n), window)
        return (obj.transmission_weight * np.real(np.sum(slit_phase * transfer, axis=0)),)

    (values,), _, _, _ = _refine(evaluate, quad.n_theta, quad, "conv_angular")
    values = values.reshape(shape)
    return values if values.ndim else float(values)


def plane_wave_conv(q_s, q_i, d: float, cfg: OpticalConfig, L_B: float):
    """cos[(d/2)(q_S + q_I)] · sinc{(L_B/2)[k_P - k_zS - κ]} · rect[|q_S| <= k_min], κ = (k_I² - q_S²)^{1/2}"""
    q_s = np.asarray(q_s, dtype=float)
    q_i = np.asarray(q_i, dtype=float)
    inside = np.abs(q_s) <= cfg.k_min
    qs_in = np.where(inside, q_s, 0.0)
    kappa = kz_clipped(qs_in, cfg.k_idler)
    mismatch = cfg.k_pump - kz_clipped(qs_in, cfg.k_signal) - kappa
    value = np.where(inside, np.cos(0.5 * d * (q_s + q_i)) * sinc(0.5 * L_B * mismatch), 0.0)
    return value if value.ndim else float(value)


def _plane_wave_interference(x: np.ndarray, cfg: OpticalConfig, obj: SlitObject,
                             L_A: float, L_B: float, n: int) -> np.ndarray:
    k_s, k_i, k_min = cfg.k_signal, cfg.k_idler, cfg.k_min
    beta, w_beta = GaussLegendreRule(n).on_interval(-np.pi / 2, np.pi / 2)
    q = k_min * np.sin(beta)
    jacobian = w_beta * k_min * np.cos(beta)
    kz_s = kz_clipped(q, k_s)
    kz_i = kz_clipped(q, k_i)
    # k_z du photon de plus grande longueur d'onde : k_min cos β exactement
    if k_s < k_i:
        kz_s = k_min * np.cos(beta)
    else:
        kz_i = k_min * np.cos(beta)
    weight_i = jacobian * phase_mismatch_from_momenta(-q, q, cfg, L_A) / (kz_s * kz_i)
    weight_s = jacobian / kz_s
    d = obj.separation_d or 0.0
    transfer = plane_wave_conv(q[:, None], q[None, :], d, cfg, L_B)
    phase = np.exp(1j * np.outer(q, x))
    signal_part = weight_s[:, None] * phase
    idler_part = weight_i[:, None] * phase
    scale = obj.transmission_weight * obj.positions.size
    return scale * np.real(np.sum(signal_part * (transfer @ idler_part), axis=0))


def image_plane_wave(x_axis, cfg: OpticalConfig, obj: SlitObject, L_A: float, L_B: float,
                     quad: QuadratureSpec, fixed_n: Optional[int] = None) -> ImageProfile:
    """Image en limite onde plane par le chemin analytique en impulsion.

    I(x) = Re ∫∫ dq_S dq_I e^{i(q_S+q_I)x} Π_A(-q_I, q_I) conv(q_S, q_I) / [k_zS(q_I) k_zI(q_I) k_zS(q_S)]
    sur |q| <= k_min, avec q = k_min sin β. Le cas dégénéré (λ_S = λ_I) diverge
    logarithmiquement aux incidences rasantes et exige une pompe gaussienne finie.
    """
    started = time.perf_counter()
    x = _check_axis(x_axis)
    if abs(cfg.k_signal - cfg.k_idler) <= DEGENERACY_TOL * cfg.k_signal:
        raise UnsupportedProfileError(
            "Onde plane dégénérée (λ_S = λ_I) : intégrale divergente, utiliser une pompe gaussienne finie"
        )

    def evaluate(n: int):
        return (_plane_wave_interference(x, cfg, obj, L_A, L_B, n),)

    if fixed_n:
        (interference,) = evaluate(fixed_n)
        diagnostics = {"n_theta_requested": quad.n_theta, "n_theta": int(fixed_n),
                       "achieved_tol": None, "fixed": True, "refinements": []}
    else:
        n_start = node_count(cfg, PumpProfile.plane_wave(), obj, x, quad.n_theta)
        (interference,), n_final, achieved, history = _refine(evaluate, n_start, quad, "image onde plane")
        diagnostics = {"n_theta_requested": quad.n_theta, "n_theta_start": n_start, "n_theta": n_final,
                       "achieved_tol": achieved, "fixed": False, "refinements": history}
    values, _, peak = _normalize(interference, None)
    meta = _run_meta(cfg, PumpProfile.plane_wave(), obj, L_A, L_B, diagnostics, started, peak, "plane_wave")
    return ImageProfile(x_axis=x, values=values, meta=meta)


def compute_image(x_axis, cfg: OpticalConfig, pump: PumpProfile, obj: SlitObject, quad: QuadratureSpec,
                  jobs: Optional[int] = None, fixed_n: Optional[int] = None) -> ImageProfile:
    """Aiguillage selon la pompe : forme réduite (gaussienne) ou chemin analytique (onde plane)"""
    if pump.is_gaussian:
        return image_reduced(x_axis, cfg, pump, obj, cfg.L_A, cfg.L_B, quad, jobs=jobs, fixed_n=fixed_n)
    return image_plane_wave(x_axis, cfg, obj, cfg.L_A, cfg.L_B, quad, fixed_n=fixed_n)


def phi_A_angular(theta_s, theta_i, cfg: OpticalConfig, pump: PumpProfile, L_A: float):
    """φ_A(θ_S, θ_I) = [k_I cos θ_I]^{1/2} E_P Π(θ_S, θ_I, L_A)"""
    _require_gaussian(pump, "phi_A_angular")
    theta_s = np.asarray(theta_s, dtype=float)
    theta_i = np.asarray(theta_i, dtype=float)
    cos_i = np.where(np.abs(theta_i) >= np.pi / 2, 0.0, np.cos(theta_i))
    q_sum = cfg.k_signal * np.sin(theta_s) + cfg.k_idler * np.sin(theta_i)
    value = (np.sqrt(cfg.k_idler * cos_i) * pump_envelope(q_sum, pump)
             * phase_mismatch_sinc(theta_s, theta_i, cfg, L_A)).astype(complex)
    return value if value.ndim else complex(value)


def _idler_nodes_for_span(cfg: OpticalConfig, span: float) -> int:
    """Nœuds θ_I pour résoudre e^{i k_I sin θ_I x_I} jusqu'à |x_I| = span"""
    return int(np.ceil(1.5 * (np.pi / 4) * cfg.k_idler * span + 32))


def spatial_correlation(which, x_s, x_i, cfg: OpticalConfig, pump: PumpProfile,
                        L_A: float, L_B: float, obj: SlitObject, quad: QuadratureSpec) -> np.ndarray:
    """Φ_A ou Φ_BT sur la grille (x_S, x_I), tableau complexe de forme [len(x_S), len(x_I)]"""
    _require_gaussian(pump, "spatial_correlation")
    which = CorrelationKind(which)
    xs = _check_axis(x_s)
    xi = _check_axis(x_i)
    span_nodes = _idler_nodes_for_span(cfg, float(np.max(np.abs(xi))))
    n_start = node_count(cfg, pump, obj, np.concatenate([xs, xi]), quad.n_theta)

    def evaluate(n: int):
        kernel = ImagingKernel(cfg, pump, obj, L_A, L_B, n, n_idler=n + span_nodes)
        return (kernel.correlation(which, xs, xi),)

    (values,), _, _, _ = _refine(evaluate, n_start, quad, f"corrélation Φ_{which.value}")
    return values


def full_width_half_maximum(x: np.ndarray, y: np.ndarray, peak_index: Optional[int] = None) -> float:
    """Largeur à mi-hauteur du lobe contenant peak_index, par interpolation linéaire"""
    if peak_index is None:
        peak_index = int(np.argmax(y))
    half = 0.5 * y[peak_index]
    left = peak_index
    while left > 0 and y[left] > half:
        left -= 1
    right = peak_index
    while right < y.size - 1 and y[right] > half:
        right += 1
    if y[left] > half or y[right] > half:
        return float("nan")
    x_left = np.interp(half, [y[left], y[left + 1]], [x[left], x[left + 1]])
    x_right = np.interp(half, [y[right], y[right - 1]], [x[right], x[right - 1]])
    return float(x_right - x_left)


def _direct_integrand(kernel: ImagingKernel, x_s: np.ndarray, x_i: np.ndarray) -> np.ndarray:
    phi_a = kernel.correlation(CorrelationKind.A, x_s, x_i)
    phi_bt = kernel.correlation(CorrelationKind.BT, x_s, x_i)
    return np.real(np.conj(phi_a) * phi_bt)


def image_direct(x_axis, cfg: OpticalConfig, pump: PumpProfile, obj: SlitObject,
                 L_A: float, L_B: float, quad_coarse: QuadratureSpec,
                 strict: bool = False) -> ImageProfile:
    """Oracle : intégration numérique de Re(Φ_A* Φ_BT) sur x_I (coûteux, grilles grossières).

    Trapèzes au pas λ_I/4 (exact pour un intégrande à bande limitée), fenêtre [-W, W]
    doublée jusqu'à ce que l'intégrande au bord soit < 1e-4 de son maximum ou que
    W atteigne le plafond ; la queue algébrique en |x_I|^{-3/2} est corrigée par
    extrapolation de Richardson 2·I(W) - I(W/4).
    """
    _require_gaussian(pump, "image_direct")
    started = time.perf_counter()
    x = _check_axis(x_axis)
    lambda_i = cfg.lambda_idler
    step = lambda_i / 4.0
    cap = DIRECT_WINDOW_CAP_WAVELENGTHS * lambda_i

    n = node_count(cfg, pump, obj, x, quad_coarse.n_theta)
    n_idler = max(n, _idler_nodes_for_span(cfg, cap))
    kernel = ImagingKernel(cfg, pump, obj, L_A, L_B, n, n_idler=n_idler)

    offsets = np.arange(-64, 65) * step
    ridge = np.abs(kernel.correlation(CorrelationKind.A, np.zeros(1), offsets))[0]
    fwhm = full_width_half_maximum(offsets, ridge)
    sigma_corr = fwhm / FWHM_TO_SIGMA if np.isfinite(fwhm) else lambda_i
    separation = obj.separation_d or 0.0
    base_window = max(3.0 * sigma_corr, 2.0 * separation, step)

    quarter_steps = int(np.ceil(base_window / step))
    half_steps = min(4 * quarter_steps, int(round(cap / step)))
    while True:
        half_steps = 4 * int(np.ceil(half_steps / 4))
        x_i = np.arange(-half_steps, half_steps + 1) * step
        integrand = _direct_integrand(kernel, x, x_i)
        peak = float(np.max(np.abs(integrand)))
        boundary = float(max(np.max(np.abs(integrand[:, 0])), np.max(np.abs(integrand[:, -1]))))
        ratio = boundary / peak if peak > 0 else 0.0
        logging.debug(f"Fenêtre x_I = ±{half_steps * step:.3e} m, bord/max = {ratio:.2e}")
        if ratio < DIRECT_BOUNDARY_RATIO or half_steps * step >= cap:
            break
        half_steps = min(2 * half_steps, int(round(cap / step)))

    full = np.trapezoid(integrand, dx=step, axis=1)
    q = half_steps // 4
    centre = slice(half_steps - q, half_steps + q + 1)
    quarter = np.trapezoid(integrand[:, centre], dx=step, axis=1)
    interference = 2.0 * full - quarter

    diagnostics = {
        "n_theta": n,
        "n_theta_idler": n_idler,
        "x_i_step": step,
        "window_half_width": half_steps * step,
        "sigma_corr": sigma_corr,
        "boundary_ratio": ratio,
        "window_criterion_met": ratio < DIRECT_BOUNDARY_RATIO,
        "richardson": True,
    }
    if ratio >= DIRECT_BOUNDARY_RATIO:
        message = (f"Fenêtre x_I plafonnée à ±{half_steps * step:.3e} m : intégrande au bord "
                   f"{ratio:.2e} du maximum (seuil {DIRECT_BOUNDARY_RATIO:.0e})")
        if strict:
            raise WindowTooSmallError(message, diagnostics)
        logging.warning(f"⚠️ {message}")

    values, _, peak_value = _normalize(interference, None)
    meta = _run_meta(cfg, pump, obj, L_A, L_B, diagnostics, started, peak_value, "direct")
    return ImageProfile(x_axis=x, values=values, meta=meta)


def broadband_image(x_axis, lambda_pump: float, lambda_signal_values: Sequence[float],
                    L_A: float, L_B: float, pump: PumpProfile, obj: SlitObject,
                    quad: QuadratureSpec, jobs: Optional[int] = None) -> ImageProfile:
    """Somme incohérente d'images à bande étroite, λ_P fixe et λ_I déduite pour chaque λ_S"""
    started = time.perf_counter()
    x = _check_axis(x_axis)
    total = np.zeros_like(x)
    components = []
    for lambda_signal in lambda_signal_values:
        cfg = OpticalConfig.from_pump_signal(lambda_pump, lambda_signal, L_A, L_B)
        profile = compute_image(x, cfg, pump, obj, quad, jobs=jobs)
        total += profile.raw_values
        components.append({"lambda_signal": lambda_signal, "lambda_idler": cfg.lambda_idler,
                           "n_theta": profile.meta["quadrature"]["n_theta"]})
        logging.info(f"📊 Composante λ_S={lambda_signal:.4e} m ajoutée")
    values, _, peak = _normalize(total, None)
    meta = {
        "method": "broadband",
        "lambda_pump": lambda_pump,
        "L_A": L_A,
        "L_B": L_B,
        "pump": pump.to_dict(),
        "object": obj.to_dict(),
        "components": components,
        "normalization": {"kind": "peak", "peak": peak},
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    return ImageProfile(x_axis=x, values=values, meta=meta)

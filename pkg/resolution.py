"""
Critère de résolution (creux de 20 %), recherche de la distance minimale résolvable,
fonction d'étalement du point, forme paraxiale fermée et balayages de paramètres.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import (
    COARSE_SCAN_STEPS,
    DIP_AXIS_SAMPLES,
    DIP_REFINE_MAX,
    DIP_THRESHOLD,
    DIP_TOLERANCE,
    MAX_WORKERS_CPU,
    MONOTONICITY_TOL,
    PARAXIAL_GAMMA,
)
from imaging_engine import (
    ImageProfile,
    MalformedProfileError,
    QuadratureConvergenceError,
    SlitObject,
    compute_image,
    full_width_half_maximum,
)
from optics_core import OpticalConfig, OpticsDomainError, PumpProfile, QuadratureSpec, UnsupportedProfileError

# d_min / max(λ_S, λ_I) limité par la diffraction, par régime de longueurs d'onde
REGIME_FACTORS = {
    "idler_longer": 0.45,
    "signal_longer": 0.40,
    "degenerate": 0.37,
}

DEFAULT_THICKNESS_GRID = np.logspace(np.log10(10e-9), np.log10(1e-3), 25)


class BracketError(RuntimeError):
    """Le balayage grossier n'encadre pas le seuil de creux ; porte la table du balayage"""

    def __init__(self, message: str, scan: List[Dict]):
        super().__init__(message)
        self.scan = scan


@dataclass(frozen=True)
class SearchSpec:
    d_lo: Optional[float] = None
    d_hi: Optional[float] = None
    tol_d: Optional[float] = None


@dataclass
class ResolutionResult:
    d_min: float
    dip_at_dmin: float
    bracket: Tuple[float, float]
    iterations: int
    config_snapshot: Dict
    n_theta: int
    scan: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SweepPoint:
    parameters: Dict[str, float]
    d_min: float
    paraxial_d_min: Optional[float]
    dip_at_dmin: float
    ratio: float
    status: str = "ok"
    message: str = ""
    n_theta: Optional[int] = None
    iterations: Optional[int] = None


@dataclass
class SweepTable:
    kind: str
    parameter_names: List[str]
    points: List[SweepPoint]
    meta: Dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for point in self.points:
            row = dict(point.parameters)
            row.update({
                "d_min": point.d_min,
                "paraxial_d_min": np.nan if point.paraxial_d_min is None else point.paraxial_d_min,
                "dip_at_dmin": point.dip_at_dmin,
                "ratio": point.ratio,
                "status": point.status,
                "n_theta": point.n_theta,
                "iterations": point.iterations,
                "message": point.message,
            })
            rows.append(row)
        return pd.DataFrame(rows)

    @property
    def failed(self) -> int:
        return sum(1 for p in self.points if p.status != "ok")


def dip_ratio(profile: ImageProfile) -> float:
    """I(0) / max(I), I(0) interpolé quadratiquement sur les trois échantillons les plus proches"""
    x = np.asarray(profile.x_axis, dtype=float)
    y = np.asarray(profile.values, dtype=float)
    if x.size < 3:
        raise MalformedProfileError("Au moins trois échantillons sont nécessaires")
    peak = float(np.max(y))
    if not peak > 0:
        raise MalformedProfileError(f"Maximum de l'image non positif ({peak})")
    nearest = np.sort(np.argsort(np.abs(x))[:3])
    coefficients = np.polyfit(x[nearest], y[nearest], 2)
    return float(np.polyval(coefficients, 0.0) / peak)


def dip_axis(d: float) -> np.ndarray:
    return np.linspace(-1.5 * d, 1.5 * d, DIP_AXIS_SAMPLES)


def paraxial_prefactor(gamma: float = PARAXIAL_GAMMA) -> float:
    return 2.0 * np.sqrt(-np.log(0.4) * gamma / (2.0 * np.pi))


def paraxial_dmin(lambda_s: float, lambda_i: float, L_A: float, L_B: float) -> float:
    """2·[-ln(0.4)·γ/(2π)·(λ_S + λ_I)]^{1/2}·(1/L_A + 1/L_B)^{-1/2}, γ = 0.8"""
    for name, value in (("lambda_s", lambda_s), ("lambda_i", lambda_i), ("L_A", L_A), ("L_B", L_B)):
        if not np.isfinite(value) or value <= 0:
            raise OpticsDomainError(f"{name} doit être strictement positif pour la forme paraxiale (reçu {value})")
    return float(paraxial_prefactor() * np.sqrt(lambda_s + lambda_i) / np.sqrt(1.0 / L_A + 1.0 / L_B))


def psf_metrics(profile: ImageProfile) -> Dict[str, float]:
    """Largeur à mi-hauteur du lobe principal et hauteur relative du premier lobe secondaire"""
    x, y = profile.x_axis, profile.values
    peak_index = int(np.argmax(y))
    fwhm = full_width_half_maximum(x, y, peak_index)
    k = peak_index
    while k < y.size - 1 and y[k + 1] <= y[k]:
        k += 1
    while k < y.size - 1 and y[k + 1] >= y[k]:
        k += 1
    side_lobe = float(y[k] / y[peak_index]) if 0 < k < y.size - 1 else float("nan")
    return {"fwhm": fwhm, "first_side_lobe": side_lobe}


def psf(cfg: OpticalConfig, pump: PumpProfile, L_A: float, L_B: float, x_axis,
        quad: QuadratureSpec, jobs: Optional[int] = None) -> ImageProfile:
    """Image d'une fente unique, normalisée, avec largeur du lobe principal et lobe secondaire"""
    profile = compute_image(x_axis, cfg.with_thickness(L_A, L_B), pump, SlitObject.single_slit(), quad, jobs=jobs)
    profile.meta["psf"] = psf_metrics(profile)
    logging.info(f"📊 PSF : FWHM = {profile.meta['psf']['fwhm']:.4e} m, "
                 f"premier lobe secondaire = {profile.meta['psf']['first_side_lobe']:.4f}")
    return profile


def default_search(cfg: OpticalConfig, search: Optional[SearchSpec] = None) -> SearchSpec:
    search = search or SearchSpec()
    lambda_max = cfg.lambda_max
    d_hi = search.d_hi
    if d_hi is None:
        d_hi = 1.5 * lambda_max
        if cfg.L_A > 0 and cfg.L_B > 0:
            d_hi = max(d_hi, 2.0 * paraxial_dmin(cfg.lambda_signal, cfg.lambda_idler, cfg.L_A, cfg.L_B))
    d_lo = search.d_lo if search.d_lo is not None else d_hi / COARSE_SCAN_STEPS
    tol_d = search.tol_d if search.tol_d is not None else lambda_max / 200.0
    if not (0 < d_lo < d_hi):
        raise OpticsDomainError(f"Intervalle de recherche invalide : d_lo={d_lo}, d_hi={d_hi}")
    return SearchSpec(d_lo=d_lo, d_hi=d_hi, tol_d=tol_d)


def _scan_grid(search: SearchSpec) -> np.ndarray:
    step = search.d_hi / COARSE_SCAN_STEPS
    grid = np.arange(search.d_lo, search.d_hi + 0.5 * step, step)
    grid = grid[grid <= search.d_hi * (1 + 1e-12)]
    if grid[-1] < search.d_hi:
        grid = np.append(grid, search.d_hi)
    return grid


def min_resolvable_distance(cfg: OpticalConfig, pump: PumpProfile, L_A: float, L_B: float,
                            quad: QuadratureSpec, search: Optional[SearchSpec] = None,
                            jobs: Optional[int] = None) -> ResolutionResult:
    """Balayage grossier (pas d_hi/16), bisection sur d jusqu'à |d_hi - d_lo| < tol_d, puis
    fausse position jusqu'à un creux à moins de DIP_TOLERANCE du seuil.

    Le nombre de nœuds est fixé une fois pour toutes par raffinement à d_hi puis
    réutilisé à chaque pas, ce qui rend la recherche déterministe.
    """
    cfg = cfg.with_thickness(L_A, L_B)
    search = default_search(cfg, search)
    started = time.perf_counter()

    reference = compute_image(dip_axis(search.d_hi), cfg, pump, SlitObject.double_slit(search.d_hi), quad, jobs=jobs)
    n_fixed = reference.meta["quadrature"]["n_theta"]
    logging.info(f"🚀 Recherche de d_min sur [{search.d_lo:.3e}, {search.d_hi:.3e}] m, n={n_fixed}")

    def dip_at(d: float) -> float:
        profile = compute_image(dip_axis(d), cfg, pump, SlitObject.double_slit(d), quad, jobs=jobs, fixed_n=n_fixed)
        return dip_ratio(profile)

    scan: List[Dict] = []
    crossing = None
    for d in _scan_grid(search):
        dip = dip_at(float(d))
        scan.append({"d": float(d), "dip": dip})
        logging.debug(f"Balayage : d={d:.4e} m, creux={dip:.4f}")
        if len(scan) > 1 and dip > scan[-2]["dip"] + MONOTONICITY_TOL:
            raise BracketError(
                f"Rapport de creux non monotone en d : {scan[-2]['dip']:.4f} -> {dip:.4f} "
                f"entre {scan[-2]['d']:.4e} et {d:.4e} m", scan)
        if dip < DIP_THRESHOLD:
            crossing = len(scan) - 1
            break

    if crossing is None:
        raise BracketError(f"Aucun croisement du seuil {DIP_THRESHOLD} jusqu'à d_hi={search.d_hi:.4e} m", scan)
    if crossing == 0:
        raise BracketError(f"Creux déjà inférieur à {DIP_THRESHOLD} en d_lo={search.d_lo:.4e} m", scan)

    lo, hi = scan[crossing - 1]["d"], scan[crossing]["d"]
    dip_lo, dip_hi = scan[crossing - 1]["dip"], scan[crossing]["dip"]
    initial_bracket = (lo, hi)
    iterations = 0
    while hi - lo >= search.tol_d:
        mid = 0.5 * (lo + hi)
        dip = dip_at(mid)
        if dip > DIP_THRESHOLD:
            lo, dip_lo = mid, dip
        else:
            hi, dip_hi = mid, dip
        iterations += 1

    # Fausse position dans l'encadrement final
    for _ in range(DIP_REFINE_MAX):
        d_min = lo + (dip_lo - DIP_THRESHOLD) / (dip_lo - dip_hi) * (hi - lo)
        dip_min = dip_at(d_min)
        iterations += 1
        if abs(dip_min - DIP_THRESHOLD) <= DIP_TOLERANCE:
            break
        if dip_min > DIP_THRESHOLD:
            lo, dip_lo = d_min, dip_min
        else:
            hi, dip_hi = d_min, dip_min
    else:
        raise BracketError(
            f"Creux {dip_min:.4f} encore hors de {DIP_THRESHOLD} ± {DIP_TOLERANCE} "
            f"après {DIP_REFINE_MAX} pas de fausse position sur [{lo:.4e}, {hi:.4e}] m", scan)
    logging.info(f"✅ d_min = {d_min:.4e} m (creux {dip_min:.4f}, {iterations} itérations, "
                 f"{time.perf_counter() - started:.1f} s)")
    snapshot = {
        "config": cfg.to_dict(),
        "pump": pump.to_dict(),
        "quadrature": quad.to_dict(),
        "search": asdict(search),
        "initial_bracket": list(initial_bracket),
    }
    return ResolutionResult(d_min=d_min, dip_at_dmin=dip_min, bracket=(lo, hi), iterations=iterations,
                            config_snapshot=snapshot, n_theta=n_fixed, scan=scan)


def _sweep_point(task: Dict) -> Tuple[int, SweepPoint]:
    """Tâche d'un point de balayage, exécutée dans un processus de travail"""
    cfg: OpticalConfig = task["cfg"]
    paraxial = None
    if cfg.L_A > 0 and cfg.L_B > 0:
        paraxial = paraxial_dmin(cfg.lambda_signal, cfg.lambda_idler, cfg.L_A, cfg.L_B)
    try:
        result = min_resolvable_distance(cfg, task["pump"], cfg.L_A, cfg.L_B, task["quad"],
                                         task["search"], jobs=1)
        point = SweepPoint(parameters=task["parameters"], d_min=result.d_min, paraxial_d_min=paraxial,
                           dip_at_dmin=result.dip_at_dmin, ratio=result.d_min / cfg.lambda_max,
                           n_theta=result.n_theta, iterations=result.iterations)
    except (BracketError, QuadratureConvergenceError, MalformedProfileError,
            UnsupportedProfileError, OpticsDomainError) as e:
        point = SweepPoint(parameters=task["parameters"], d_min=float("nan"), paraxial_d_min=paraxial,
                           dip_at_dmin=float("nan"), ratio=float("nan"),
                           status=type(e).__name__, message=str(e))
    return task["index"], point


def _check_axis_monotone(name: str, values: Sequence[float]) -> np.ndarray:
    axis = np.asarray(values, dtype=float)
    if axis.ndim != 1 or axis.size == 0:
        raise ValueError(f"L'axe {name} est vide")
    if axis.size > 1 and not (np.all(np.diff(axis) > 0) or np.all(np.diff(axis) < 0)):
        raise ValueError(f"L'axe {name} doit être strictement monotone")
    return axis


def _run_sweep(kind: str, parameter_names: List[str], tasks: List[Dict], jobs: Optional[int]) -> SweepTable:
    started = time.perf_counter()
    workers = max(1, min(jobs or MAX_WORKERS_CPU, len(tasks)))
    points: List[Optional[SweepPoint]] = [None] * len(tasks)
    logging.info(f"🚀 Balayage {kind} : {len(tasks)} points, {workers} processus")
    if workers == 1:
        for task in tqdm(tasks, desc=f"Balayage {kind}"):
            index, point = _sweep_point(task)
            points[index] = point
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_sweep_point, task) for task in tasks]
            for future in tqdm(as_completed(futures), total=len(futures), desc=f"Balayage {kind}"):
                index, point = future.result()
                points[index] = point
    for point in points:
        if point.status != "ok":
            logging.warning(f"⚠️ Point {point.parameters} en échec : {point.status} ({point.message})")
    table = SweepTable(kind=kind, parameter_names=parameter_names, points=points,
                       meta={"wall_clock_s": round(time.perf_counter() - started, 3), "jobs": workers})
    logging.info(f"📊 Balayage {kind} terminé : {len(points) - table.failed}/{len(points)} points valides")
    return table


def _relative_spread(values: Sequence[float]) -> float:
    finite = np.asarray([v for v in values if np.isfinite(v)])
    if finite.size == 0:
        return float("nan")
    return float((finite.max() - finite.min()) / finite.max())


def sweep_thickness(cfg: OpticalConfig, pump: PumpProfile, L_values: Sequence[float],
                    quad: QuadratureSpec, search: Optional[SearchSpec] = None,
                    jobs: Optional[int] = None) -> SweepTable:
    """d_min en fonction de L = L_A = L_B, avec la prédiction paraxiale et le repérage du plateau"""
    axis = _check_axis_monotone("L", L_values)
    tasks = [{"index": k, "cfg": cfg.with_thickness(float(L)), "pump": pump, "quad": quad, "search": search,
              "parameters": {"L": float(L)}} for k, L in enumerate(axis)]
    table = _run_sweep("thickness", ["L"], tasks, jobs)
    plateau = [p.d_min for p in table.points if p.parameters["L"] <= cfg.lambda_max]
    table.meta.update({
        "plateau_limit": cfg.lambda_max,
        "plateau_points": len(plateau),
        "plateau_spread": _relative_spread(plateau),
        "config": cfg.to_dict(),
        "pump": pump.to_dict(),
    })
    return table


def sweep_pump_width(cfg: OpticalConfig, L: float, sigma_values: Sequence[float],
                     quad: QuadratureSpec, search: Optional[SearchSpec] = None,
                     jobs: Optional[int] = None) -> SweepTable:
    axis = _check_axis_monotone("sigma_p", sigma_values)
    base = cfg.with_thickness(L)
    tasks = [{"index": k, "cfg": base, "pump": PumpProfile.gaussian(float(s)), "quad": quad, "search": search,
              "parameters": {"sigma_p": float(s)}} for k, s in enumerate(axis)]
    table = _run_sweep("pump-width", ["sigma_p"], tasks, jobs)
    table.meta.update({"spread": _relative_spread([p.d_min for p in table.points]), "L": L,
                       "config": base.to_dict()})
    return table


def sweep_wavelengths(lambda_s_values: Sequence[float], lambda_i_values: Sequence[float],
                      quad: QuadratureSpec, L: float = 100e-9, sigma_p: float = 100e-6,
                      search: Optional[SearchSpec] = None, jobs: Optional[int] = None) -> SweepTable:
    """Grille 2D (λ_S, λ_I) ; la colonne ratio donne d_min / max(λ_S, λ_I)"""
    axis_s = _check_axis_monotone("lambda_signal", lambda_s_values)
    axis_i = _check_axis_monotone("lambda_idler", lambda_i_values)
    pump = PumpProfile.gaussian(sigma_p)
    tasks = []
    for lambda_s in axis_s:
        for lambda_i in axis_i:
            tasks.append({
                "index": len(tasks),
                "cfg": OpticalConfig.from_signal_idler(float(lambda_s), float(lambda_i), L, L),
                "pump": pump,
                "quad": quad,
                "search": search,
                "parameters": {"lambda_signal": float(lambda_s), "lambda_idler": float(lambda_i)},
            })
    table = _run_sweep("wavelengths", ["lambda_signal", "lambda_idler"], tasks, jobs)
    table.meta.update({"L": L, "sigma_p": sigma_p, "regime_factors": REGIME_FACTORS})
    return table


def ratio_map(table: SweepTable) -> pd.DataFrame:
    """Carte d_min / max(λ_S, λ_I) indexée par λ_S (lignes) et λ_I (colonnes)"""
    frame = table.to_frame()
    return frame.pivot(index="lambda_signal", columns="lambda_idler", values="ratio")

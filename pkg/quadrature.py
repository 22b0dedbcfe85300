"""
Quadrature de Gauss-Legendre par panneaux pour les intégrales angulaires oscillantes.
"""

from functools import lru_cache
from typing import Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss


@lru_cache(maxsize=32)
def _reference_rule(npoints: int) -> Tuple[np.ndarray, np.ndarray]:
    zvec, wvec = leggauss(npoints)
    zvec.setflags(write=False)
    wvec.setflags(write=False)
    return zvec, wvec


class GaussLegendreRule:
    """
    Règle de Gauss-Legendre à npoints nœuds.
    self.zvec = nœuds dans [-1, 1]
    self.wvec = poids associés
    """

    def __init__(self, npoints: int):
        self.npoints = int(npoints)
        self.zvec, self.wvec = _reference_rule(self.npoints)

    def on_interval(self, a: float, b: float) -> Tuple[np.ndarray, np.ndarray]:
        half = 0.5 * (b - a)
        return a + half * (self.zvec + 1.0), half * self.wvec

    def on_panels(self, edges: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        """Concatène la règle sur chaque panneau [edges[k], edges[k+1]] non vide"""
        nodes, weights = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            if b > a:
                x, w = self.on_interval(a, b)
                nodes.append(x)
                weights.append(w)
        if not nodes:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(nodes), np.concatenate(weights)

    def on_windows(self, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Une fenêtre [lo[m], hi[m]] par ligne ; une fenêtre vide reçoit des poids nuls"""
        lo = np.asarray(lo, dtype=float)[:, None]
        hi = np.asarray(hi, dtype=float)[:, None]
        width = np.clip(hi - lo, 0.0, None)
        nodes = lo + 0.5 * width * (self.zvec[None, :] + 1.0)
        weights = 0.5 * width * self.wvec[None, :]
        return nodes, weights


def momentum_window_to_angles(q_lo, q_hi, k: float) -> Tuple[np.ndarray, np.ndarray]:
    """Fenêtre en impulsion transverse [q_lo, q_hi] ∩ [-k, k] vers l'intervalle angulaire correspondant"""
    q_lo = np.clip(np.asarray(q_lo, dtype=float), -k, k)
    q_hi = np.clip(np.asarray(q_hi, dtype=float), -k, k)
    theta_lo = np.arcsin(q_lo / k)
    theta_hi = np.arcsin(q_hi / k)
    return theta_lo, np.maximum(theta_hi, theta_lo)


def auto_node_count(n_theta: int, k_band: float, x_scale: float) -> int:
    """n >= 16·k·x/π pour résoudre l'oscillation la plus rapide, jamais en dessous de n_theta"""
    required = int(np.ceil(16.0 * k_band * x_scale / np.pi))
    return max(int(n_theta), required)


def max_norm_difference(reference: np.ndarray, candidate: np.ndarray) -> float:
    """Écart en norme infinie après normalisation de chaque profil par son pic"""
    ref_peak = np.max(np.abs(reference))
    cand_peak = np.max(np.abs(candidate))
    if ref_peak == 0 and cand_peak == 0:
        return 0.0
    if ref_peak == 0 or cand_peak == 0:
        return float("inf")
    return float(np.max(np.abs(reference / ref_peak - candidate / cand_peak)))

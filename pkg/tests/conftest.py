import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from optics_core import OpticalConfig, PumpProfile, QuadratureSpec


@pytest.fixture
def anchor_cfg():
    """λ_S = 530 nm, λ_I = 10 μm, cristaux ultra-minces de 100 nm"""
    return OpticalConfig.from_signal_idler(530e-9, 10e-6, 100e-9, 100e-9)


@pytest.fixture
def swapped_cfg():
    return OpticalConfig.from_signal_idler(10e-6, 530e-9, 100e-9, 100e-9)


@pytest.fixture
def degenerate_cfg():
    return OpticalConfig.from_signal_idler(1e-6, 1e-6, 100e-9, 100e-9)


@pytest.fixture
def surrogate_pump():
    """Substitut gaussien de l'onde plane (σ_P = 1 m)"""
    return PumpProfile.gaussian(1.0)


@pytest.fixture
def narrow_pump():
    return PumpProfile.gaussian(100e-6)


@pytest.fixture
def quad():
    return QuadratureSpec()


@pytest.fixture
def coarse_quad():
    return QuadratureSpec(n_theta=64, n_refine_max=3, rel_tol=1e-2)

import math

import pytest

from levelcurves.spectrum import MultipoleEntry, make_spectrum
from levelcurves.synthesis import build_icosphere


def spec_from_fractions(fracs, require_monopole=True):
    """Build a spectrum from {ell: (variance_fraction, beta, alpha)}; the
    fractions are the (2 ell + 1) C_ell(0) / 4 pi shares of sigma0^2 = 1."""
    entries = [
        MultipoleEntry(ell, 4 * math.pi * f / (2 * ell + 1), beta, alpha)
        for ell, (f, beta, alpha) in fracs.items()
    ]
    return make_spectrum(entries, normalize=True,
                         require_monopole=require_monopole)


@pytest.fixture(scope="session")
def mesh3():
    return build_icosphere(3)


@pytest.fixture(scope="session")
def mesh4():
    return build_icosphere(4)


@pytest.fixture(scope="session")
def mesh5():
    return build_icosphere(5)


@pytest.fixture(scope="session")
def mesh6():
    return build_icosphere(6)

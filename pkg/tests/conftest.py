"""Shared helpers for the test suite."""

import numpy as np

from spherecam import sphharm


def random_real_coeffs(L, rng, scale=1.0):
    """Seeded conjugate-symmetric coefficient table (i.e. a real signal).

    m = 0 entries are drawn real; m > 0 entries are complex and mirrored with
    the (-1)^m conjugate rule.
    """
    c = sphharm.HarmonicCoeffs.zeros(L)
    for l in range(L):
        c.set_coeff(l, 0, scale * rng.standard_normal())
        for m in range(1, l + 1):
            z = scale * (rng.standard_normal() + 1j * rng.standard_normal())
            c.set_coeff(l, m, z)
            c.set_coeff(l, -m, (-1.0) ** m * np.conj(z))
    return c


def random_complex_coeffs(L, rng, scale=1.0):
    """Seeded unconstrained (generally complex-signal) coefficient table."""
    c = sphharm.HarmonicCoeffs.zeros(L)
    for l in range(L):
        for m in range(-l, l + 1):
            c.set_coeff(l, m, scale * (rng.standard_normal() + 1j * rng.standard_normal()))
    return c


def random_real_signal(L, rng, scale=1.0):
    """Real bandlimited signal synthesized from seeded random coefficients."""
    return sphharm.sht_inverse(random_real_coeffs(L, rng, scale=scale))

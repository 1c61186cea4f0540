"""Isotropic spherical convolution: spectral scaling and direct quadrature.

Convolving a scene with an azimuthally-symmetric response multiplies each
harmonic coefficient by the per-degree factor ghat_l = sqrt(4*pi/(2l+1)) *
g_{l,0} (the convolution theorem for zonal kernels).  The brute-force path
evaluates the defining integral by grid quadrature and doubles as the
measurement model for arbitrarily oriented (deformed) pixel layouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sphharm import HarmonicCoeffs, SphericalSignal

__all__ = ["SpectralOperator", "convolve_spectral", "convolve_bruteforce"]

_UNIT_NORM_TOL = 1e-9
_ORIENT_CHUNK = 512


@dataclass
class SpectralOperator:
    """Per-degree scaling factors ghat_l of an isotropic convolution."""

    L: int
    scaling: np.ndarray

    def __post_init__(self) -> None:
        self.scaling = np.asarray(self.scaling, dtype=float)
        if self.scaling.shape != (self.L,):
            raise ValueError(
                f"scaling length {self.scaling.shape} does not match bandlimit L={self.L}"
            )
        if not np.all(np.isfinite(self.scaling)):
            raise ValueError("scaling coefficients must be finite")

    @classmethod
    def from_response(cls, response, L: int | None = None) -> "SpectralOperator":
        """Build from anything carrying ``scaling_coeffs`` (an AngularResponse)."""
        s = np.asarray(response.scaling_coeffs, dtype=float)
        if L is None:
            L = s.size
        if L > s.size:
            raise ValueError(f"response holds {s.size} scaling coefficients, requested L={L}")
        return cls(int(L), s[:L])


def convolve_spectral(f: HarmonicCoeffs, op: SpectralOperator) -> HarmonicCoeffs:
    """Coefficient-domain convolution: (f*g)_{l,m} = ghat_l * f_{l,m}."""
    if f.L != op.L:
        raise ValueError(f"bandlimit mismatch: coefficients have L={f.L}, operator has L={op.L}")
    return HarmonicCoeffs(f.L, f.table * op.scaling[:, None])


def _orientations_to_vectors(orientations) -> np.ndarray:
    arr = np.asarray(orientations, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError(
            f"orientations must be (N, 3) unit vectors or (N, 2) theta/phi pairs, got shape {arr.shape}"
        )
    if arr.shape[1] == 2:
        th, ph = arr[:, 0], arr[:, 1]
        st = np.sin(th)
        return np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], axis=1)
    norms = np.linalg.norm(arr, axis=1)
    off = np.abs(norms - 1.0)
    if np.any(off > _UNIT_NORM_TOL):
        k = int(np.argmax(off))
        raise ValueError(
            f"orientation {k} is not unit-norm (|v| = {norms[k]!r}, tolerance {_UNIT_NORM_TOL})"
        )
    return arr


def convolve_bruteforce(
    f: SphericalSignal,
    response,
    orientations,
    bandlimit: int | None = None,
) -> np.ndarray:
    """Direct quadrature of the convolution integral at each orientation.

    Returns ``sum_s weights_s * g(arccos(r . s)) * f(s)`` per orientation
    ``r``.  ``response`` is evaluated through its tabulated profile by
    default; passing ``bandlimit`` evaluates its zonal synthesis truncated at
    that degree instead (the exact counterpart of the spectral path for
    bandlimited signals).
    """
    r = _orientations_to_vectors(orientations)
    grid = f.grid
    s = grid.directions()
    wf = (np.asarray(f.values) * grid.weights[:, None]).reshape(-1)
    out = np.empty(r.shape[0], dtype=complex if np.iscomplexobj(wf) else float)
    for start in range(0, r.shape[0], _ORIENT_CHUNK):
        block = r[start : start + _ORIENT_CHUNK]
        ang = np.arccos(np.clip(block @ s.T, -1.0, 1.0))
        if bandlimit is None:
            gv = response.eval_profile(ang)
        else:
            gv = response.eval_bandlimited(ang.reshape(-1), bandlimit).reshape(ang.shape)
        out[start : start + _ORIENT_CHUNK] = gv @ wf
    return out

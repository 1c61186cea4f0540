"""Spherical harmonic analysis/synthesis on an equiangular grid.

Sampling convention
-------------------
A bandlimit ``L`` grid has shape ``(L, 2L - 1)`` with

* colatitudes  ``theta_t = pi * (2t + 1) / (2L - 1)``, ``t = 0 .. L-1`` (the last
  row sits exactly on the south pole),
* longitudes   ``phi_p = 2 * pi * p / (2L - 1)``, ``p = 0 .. 2L-2``.

Harmonics are orthonormal with the Condon-Shortley phase,

    Y_lm(theta, phi) = Nbar_lm * P_l^m(cos theta) * exp(i m phi),

so a real signal satisfies ``c[l, -m] = (-1)^m * conj(c[l, m])``.

Coefficients are stored densely as a complex ``(L, 2L - 1)`` table indexed
``[l, L - 1 + m]``; entries with ``|m| > l`` are zero.

The forward transform separates variables: an FFT over longitude followed by a
per-order least-squares solve against the normalized associated Legendre
matrix (pseudo-inverses are precomputed once per bandlimit and cached).  All
reductions are plain sequential numpy sums, so results are bit-stable across
repeated runs and thread counts.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SphericalGrid",
    "SphericalSignal",
    "HarmonicCoeffs",
    "make_grid",
    "assoc_legendre",
    "ylm_eval",
    "sht_forward",
    "sht_inverse",
    "save_coeffs",
    "load_coeffs",
]

_REAL_SYMMETRY_TOL = 1e-9  # imaginary residue allowed when folding to a real signal


# ---------------------------------------------------------------------------
# Legendre recurrences
# ---------------------------------------------------------------------------

def _norm_legendre_zonal(L: int, x: np.ndarray) -> np.ndarray:
    """Matrix ``M[l, t] = Pbar_{l,0}(x_t)`` for ``l = 0 .. L-1``.

    ``Pbar`` is the fully normalized associated Legendre function, i.e.
    ``Y_l0(theta, phi) = Pbar_{l,0}(cos theta)``.
    """
    x = np.asarray(x, dtype=float)
    M = np.zeros((L, x.size))
    p_prev = np.full(x.size, 1.0 / np.sqrt(4.0 * np.pi))
    M[0] = p_prev
    if L > 1:
        p_cur = np.sqrt(3.0) * x * p_prev
        M[1] = p_cur
        for l in range(2, L):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l))
            b = np.sqrt((l - 1.0) ** 2 / (4.0 * (l - 1.0) ** 2 - 1.0))
            p_next = a * (x * p_cur - b * p_prev)
            M[l] = p_next
            p_prev, p_cur = p_cur, p_next
    return M


def _norm_legendre_block(L: int, m: int, x: np.ndarray) -> np.ndarray:
    """Matrix ``A[t, l - m] = Pbar_{l,m}(x_t)`` for ``l = m .. L-1`` (``m >= 0``).

    Standard stable recurrences on the fully normalized functions: diagonal
    seed, one off-diagonal step, then three-term upward recurrence in ``l``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.zeros((n, L - m))
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    pmm = np.full(n, 1.0 / np.sqrt(4.0 * np.pi))
    for k in range(1, m + 1):
        pmm = -np.sqrt((2.0 * k + 1.0) / (2.0 * k)) * s * pmm
    out[:, 0] = pmm
    if L - m > 1:
        p_prev, p_cur = pmm, np.sqrt(2.0 * m + 3.0) * x * pmm
        out[:, 1] = p_cur
        for l in range(m + 2, L):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p_next = a * (x * p_cur - b * p_prev)
            out[:, l - m] = p_next
            p_prev, p_cur = p_cur, p_next
    return out


def assoc_legendre(l: int, m: int, x: float) -> float:
    """Associated Legendre function ``P_l^m(x)`` with Condon-Shortley phase.

    Negative orders follow ``P_l^{-m} = (-1)^m (l-m)!/(l+m)! P_l^m``.  Values
    for large ``l + m`` grow factorially and overflow float64 near |m| ~ 150;
    the normalized path used by :func:`ylm_eval` stays bounded instead.
    """
    if not isinstance(l, (int, np.integer)) or not isinstance(m, (int, np.integer)):
        raise TypeError("degree l and order m must be integers")
    if l < 0:
        raise ValueError(f"degree must satisfy l >= 0, got l={l}")
    if abs(m) > l:
        raise ValueError(f"order out of range: |m|={abs(m)} exceeds l={l}")
    if not -1.0 <= x <= 1.0:
        raise ValueError(f"argument out of domain: x={x!r} not in [-1, 1]")
    ma = abs(m)
    # Diagonal seed P_mm = (-1)^m (2m-1)!! (1-x^2)^{m/2}, then upward in l.
    pmm = 1.0
    somx2 = np.sqrt(max(0.0, (1.0 - x) * (1.0 + x)))
    for k in range(1, ma + 1):
        pmm *= -(2.0 * k - 1.0) * somx2
    if l == ma:
        p = pmm
    else:
        pm1 = x * (2.0 * ma + 1.0) * pmm
        if l == ma + 1:
            p = pm1
        else:
            for ll in range(ma + 2, l + 1):
                p = (x * (2.0 * ll - 1.0) * pm1 - (ll + ma - 1.0) * pmm) / (ll - ma)
                pmm, pm1 = pm1, p
    if m < 0:
        # ratio (l-m)!/(l+m)! evaluated incrementally to avoid overflow
        ratio = 1.0
        for k in range(l - ma + 1, l + ma + 1):
            ratio /= k
        p = ((-1.0) ** ma) * ratio * p
    return float(p)


def ylm_eval(l: int, m: int, theta: float, phi: float) -> complex:
    """Single orthonormal spherical harmonic value ``Y_lm(theta, phi)``.

    Evaluated through the normalized Legendre recurrence, stable for degrees
    well past 512.
    """
    if not isinstance(l, (int, np.integer)) or not isinstance(m, (int, np.integer)):
        raise TypeError("degree l and order m must be integers")
    if l < 0:
        raise ValueError(f"degree must satisfy l >= 0, got l={l}")
    if abs(m) > l:
        raise ValueError(f"order out of range: |m|={abs(m)} exceeds l={l}")
    ma = abs(m)
    x = np.array([np.cos(theta)])
    pbar = _norm_legendre_block(l + 1, ma, x)[0, l - ma]
    if m < 0 and ma % 2 == 1:
        pbar = -pbar
    return complex(pbar * np.exp(1j * m * phi))


# ---------------------------------------------------------------------------
# Grid and quadrature
# ---------------------------------------------------------------------------

@dataclass
class SphericalGrid:
    """Equiangular sampling grid of bandlimit ``L``.

    ``weights[t]`` is the quadrature weight (steradians) carried by *each* of
    the ``2L - 1`` samples in theta-row ``t``; the weights are positive, sum
    to ``4 pi`` over the whole grid and integrate every zonal harmonic of
    degree below ``L`` exactly.
    """

    L: int
    thetas: np.ndarray = field(repr=False)
    phis: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def n_theta(self) -> int:
        return self.L

    @property
    def n_phi(self) -> int:
        return 2 * self.L - 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.L, 2 * self.L - 1)

    @property
    def n_samples(self) -> int:
        return self.L * (2 * self.L - 1)

    def angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcast ``(theta, phi)`` meshes of shape ``(L, 2L-1)``."""
        return np.meshgrid(self.thetas, self.phis, indexing="ij")

    def directions(self) -> np.ndarray:
        """Unit vectors for every sample, shape ``(L*(2L-1), 3)``, row-major."""
        th, ph = self.angles()
        st = np.sin(th)
        vecs = np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], axis=-1)
        return vecs.reshape(-1, 3)

    def integrate(self, values: np.ndarray) -> float | complex:
        """Quadrature of a sampled function over the sphere."""
        values = np.asarray(values)
        if values.shape != self.shape:
            raise ValueError(
                f"sample array shape {values.shape} does not match grid shape {self.shape}"
            )
        total = np.sum(values * self.weights[:, None])
        return complex(total) if np.iscomplexobj(values) else float(total)


def make_grid(L: int) -> SphericalGrid:
    """Build the bandlimit-``L`` grid together with its quadrature weights.

    The per-row weights solve the ``L x L`` collocation system requiring the
    rule to integrate ``Pbar_{l,0}`` exactly for all ``l < L``; positivity and
    the ``4 pi`` sum fall out of that system and are validated here.
    """
    if not isinstance(L, (int, np.integer)) or L < 1:
        raise ValueError(f"bandlimit must be a positive integer, got L={L!r}")
    L = int(L)
    n_phi = 2 * L - 1
    t = np.arange(L)
    thetas = np.pi * (2.0 * t + 1.0) / n_phi
    phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
    M = _norm_legendre_zonal(L, np.cos(thetas))
    rhs = np.zeros(L)
    rhs[0] = np.sqrt(4.0 * np.pi) / n_phi
    weights = np.linalg.solve(M, rhs)
    if not np.all(weights > 0):
        raise ValueError(f"quadrature weights lost positivity at L={L}")
    return SphericalGrid(L=L, thetas=thetas, phis=phis, weights=weights)


# ---------------------------------------------------------------------------
# Signals and coefficient tables
# ---------------------------------------------------------------------------

@dataclass
class SphericalSignal:
    """Samples of a function on a :class:`SphericalGrid` (real or complex)."""

    grid: SphericalGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"sample array shape {self.values.shape} does not match "
                f"grid shape {self.grid.shape}"
            )

    @property
    def L(self) -> int:
        return self.grid.L

    def copy(self) -> "SphericalSignal":
        return SphericalSignal(self.grid, self.values.copy())


@dataclass
class HarmonicCoeffs:
    """Dense coefficient table ``table[l, L - 1 + m]`` up to bandlimit ``L``."""

    L: int
    table: np.ndarray

    def __post_init__(self) -> None:
        if self.L < 1:
            raise ValueError(f"bandlimit must be positive, got L={self.L}")
        self.table = np.asarray(self.table, dtype=complex)
        expected = (self.L, 2 * self.L - 1)
        if self.table.shape != expected:
            raise ValueError(
                f"coefficient table shape {self.table.shape} does not match "
                f"bandlimit L={self.L} (expected {expected})"
            )

    @classmethod
    def zeros(cls, L: int) -> "HarmonicCoeffs":
        return cls(L, np.zeros((L, 2 * L - 1), dtype=complex))

    @classmethod
    def from_entries(cls, L: int, entries: dict[tuple[int, int], complex]) -> "HarmonicCoeffs":
        out = cls.zeros(L)
        for (l, m), v in entries.items():
            out.set_coeff(l, m, v)
        return out

    def _check_index(self, l: int, m: int) -> None:
        if not 0 <= l < self.L:
            raise ValueError(f"degree out of range: l={l} not in [0, {self.L})")
        if abs(m) > l:
            raise ValueError(f"order out of range: |m|={abs(m)} exceeds l={l}")

    def coeff(self, l: int, m: int) -> complex:
        self._check_index(l, m)
        return complex(self.table[l, self.L - 1 + m])

    def set_coeff(self, l: int, m: int, value: complex) -> None:
        self._check_index(l, m)
        self.table[l, self.L - 1 + m] = value

    def zonal(self) -> np.ndarray:
        """Real ``m = 0`` column (validated real), shape ``(L,)``."""
        col = self.table[:, self.L - 1]
        if np.max(np.abs(col.imag), initial=0.0) > _REAL_SYMMETRY_TOL * max(
            1.0, float(np.max(np.abs(col), initial=0.0))
        ):
            raise ValueError("m=0 coefficients have a non-trivial imaginary part")
        return col.real.copy()

    def conjugate_symmetry_error(self) -> float:
        """Max abs deviation from the real-signal symmetry ``c[l,-m] = (-1)^m conj(c[l,m])``."""
        err = np.abs(self.table[:, self.L - 1].imag).max(initial=0.0)
        for m in range(1, self.L):
            pos = self.table[:, self.L - 1 + m]
            neg = self.table[:, self.L - 1 - m]
            err = max(err, float(np.abs(neg - (-1.0) ** m * np.conj(pos)).max(initial=0.0)))
        return err

    def pad_to(self, L: int) -> "HarmonicCoeffs":
        """Embed into a larger bandlimit (zero-padding the new degrees)."""
        if L < self.L:
            raise ValueError(f"cannot pad from L={self.L} down to L={L}")
        out = HarmonicCoeffs.zeros(L)
        off = L - self.L
        out.table[: self.L, off : off + 2 * self.L - 1] = self.table
        return out

    def power(self) -> float:
        """Sum of squared coefficient magnitudes (spectral power)."""
        return float(np.sum(np.abs(self.table) ** 2))

    def copy(self) -> "HarmonicCoeffs":
        return HarmonicCoeffs(self.L, self.table.copy())


# ---------------------------------------------------------------------------
# Transform plans
# ---------------------------------------------------------------------------

class _TransformPlan:
    """Cached per-bandlimit machinery: Legendre blocks and their pseudo-inverses."""

    def __init__(self, L: int):
        self.L = L
        self.grid = make_grid(L)
        x = np.cos(self.grid.thetas)
        self.blocks = [_norm_legendre_block(L, m, x) for m in range(L)]
        self.pinvs = [np.linalg.pinv(A) for A in self.blocks]

    # -- forward/inverse ----------------------------------------------------

    def analyze(self, values: np.ndarray) -> np.ndarray:
        """Sampled signal ``(L, 2L-1)`` -> coefficient table ``(L, 2L-1)``."""
        L, W = self.L, 2 * self.L - 1
        F = np.fft.fft(values, axis=1) / W
        table = np.zeros((L, W), dtype=complex)
        for m in range(-(L - 1), L):
            cm = self.pinvs[abs(m)] @ F[:, m % W]
            if m < 0 and m % 2 != 0:
                cm = -cm
            table[abs(m):, L - 1 + m] = cm
        return table

    def synthesize(self, table: np.ndarray) -> np.ndarray:
        """Coefficient table -> sampled signal (complex ``(L, 2L-1)`` array)."""
        L, W = self.L, 2 * self.L - 1
        F = np.zeros((L, W), dtype=complex)
        for m in range(-(L - 1), L):
            cm = table[abs(m):, L - 1 + m]
            if m < 0 and m % 2 != 0:
                cm = -cm
            F[:, m % W] = self.blocks[abs(m)] @ cm
        return np.fft.ifft(F, axis=1) * W

    # -- adjoints (needed by iterative solvers) ------------------------------

    def synthesize_adjoint(self, values: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`synthesize` as a map between complex arrays."""
        L, W = self.L, 2 * self.L - 1
        F = np.fft.fft(values, axis=1)
        table = np.zeros((L, W), dtype=complex)
        for m in range(-(L - 1), L):
            cm = self.blocks[abs(m)].T @ F[:, m % W]
            if m < 0 and m % 2 != 0:
                cm = -cm
            table[abs(m):, L - 1 + m] = cm
        return table

    def analyze_adjoint(self, table: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`analyze` as a map between complex arrays."""
        L, W = self.L, 2 * self.L - 1
        F = np.zeros((L, W), dtype=complex)
        for m in range(-(L - 1), L):
            cm = table[abs(m):, L - 1 + m]
            if m < 0 and m % 2 != 0:
                cm = -cm
            F[:, m % W] = self.pinvs[abs(m)].T @ cm
        return np.fft.ifft(F, axis=1)


_plan_cache: dict[int, _TransformPlan] = {}
_plan_lock = threading.Lock()


def _get_plan(L: int) -> _TransformPlan:
    plan = _plan_cache.get(L)
    if plan is None:
        with _plan_lock:
            plan = _plan_cache.get(L)
            if plan is None:
                plan = _TransformPlan(int(L))
                _plan_cache[L] = plan
    return plan


# ---------------------------------------------------------------------------
# Public transforms
# ---------------------------------------------------------------------------

def sht_forward(signal: SphericalSignal) -> HarmonicCoeffs:
    """Forward spherical harmonic transform of a sampled signal."""
    plan = _get_plan(signal.grid.L)
    return HarmonicCoeffs(signal.grid.L, plan.analyze(np.asarray(signal.values)))


def sht_inverse(coeffs: HarmonicCoeffs, grid: SphericalGrid | None = None) -> SphericalSignal:
    """Inverse transform onto a grid of equal or larger bandlimit.

    Coefficients are zero-padded when the grid oversamples them.  If the
    coefficient table is conjugate-symmetric (a real signal) the result is
    returned as a real array; the discarded imaginary residue is checked
    against a 1e-9 budget.
    """
    if grid is None:
        grid = make_grid(coeffs.L)
    if grid.L < coeffs.L:
        raise ValueError(
            f"bandlimit mismatch: coefficients have L={coeffs.L} but grid only "
            f"supports L={grid.L}"
        )
    if grid.L > coeffs.L:
        coeffs = coeffs.pad_to(grid.L)
    plan = _get_plan(coeffs.L)
    values = plan.synthesize(coeffs.table)
    scale = max(1.0, float(np.max(np.abs(values), initial=0.0)))
    if coeffs.conjugate_symmetry_error() <= _REAL_SYMMETRY_TOL * scale:
        residue = float(np.max(np.abs(values.imag), initial=0.0))
        if residue > _REAL_SYMMETRY_TOL * scale:
            raise ValueError(
                f"imaginary residue {residue:.3e} exceeds budget for a real signal"
            )
        values = values.real.copy()
    return SphericalSignal(grid, values)


# ---------------------------------------------------------------------------
# Coefficient file I/O (text: header line "L=<int>", then "l,m,re,im" rows)
# ---------------------------------------------------------------------------

def save_coeffs(coeffs: HarmonicCoeffs, path) -> None:
    lines = [f"L={coeffs.L}"]
    for l in range(coeffs.L):
        for m in range(-l, l + 1):
            v = coeffs.table[l, coeffs.L - 1 + m]
            lines.append(f"{l},{m},{float(v.real)!r},{float(v.imag)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_coeffs(path) -> HarmonicCoeffs:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("L="):
            raise ValueError(f"malformed coefficient file: expected 'L=<int>' header, got {header!r}")
        L = int(header[2:])
        out = HarmonicCoeffs.zeros(L)
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"malformed coefficient row: {line!r}")
            l, m = int(parts[0]), int(parts[1])
            out.set_coeff(l, m, complex(float(parts[2]), float(parts[3])))
    return out

"""Sensor measurement simulation: layouts, brightness calibration, noise.

Brightness convention: ``brightness`` is the fraction of full well reached by
the *brightest* pixel when the scene is viewed through an open cosine
aperture of half-angle :data:`REFERENCE_APERTURE_DEG`.  The resulting gain
(digital numbers per unit of convolved radiance) is then applied unchanged to
the actual response under test, so masks with lower throughput genuinely
collect fewer electrons.

Noise model: expected electrons -> Poisson photon noise -> additive Gaussian
readout noise of ``readout_sigma = full_well * 10^(-DR_dB/20)`` electrons ->
clip to [0, full_well] -> normalize to [0, 1].  Draws come from a
counter-based Philox stream in a fixed vectorized order, so a seed pins the
whole measurement set regardless of scheduling.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import maskdesign
from .convolution import _orientations_to_vectors
from .operators import DenseOperator, SpectralConvOperator
from .sphharm import SphericalGrid, SphericalSignal, make_grid, sht_forward

__all__ = [
    "REFERENCE_APERTURE_DEG",
    "SensorSpec",
    "PixelLayout",
    "MeasurementSet",
    "full_grid_layout",
    "subset_layout",
    "freeform_layout",
    "deform_layout",
    "simulate",
    "subsample",
    "apply_sensor_noise",
    "measurement_operator",
    "response_hash",
    "save_measurements",
    "load_measurements",
    "save_layout",
    "load_layout",
]

# Half-angle (degrees) of the open cosine aperture defining brightness = 1.0.
REFERENCE_APERTURE_DEG = 40.0

_DEFORMATIONS = ("identity", "ellipsoid", "cap", "cylinder")


@dataclass(frozen=True)
class SensorSpec:
    """Image sensor noise description."""

    full_well: float = 32761.0  # saturation capacity, electrons
    dynamic_range_db: float = 73.07  # full well over readout noise, dB

    def __post_init__(self) -> None:
        if self.full_well <= 0:
            raise ValueError(f"full well must be positive, got {self.full_well}")
        if self.dynamic_range_db <= 0:
            raise ValueError(f"dynamic range must be positive, got {self.dynamic_range_db}")

    @property
    def readout_sigma(self) -> float:
        """Readout noise in electrons, derived (never stored)."""
        return self.full_well * 10.0 ** (-self.dynamic_range_db / 20.0)


@dataclass
class PixelLayout:
    """Pixel orientation set: the full grid, a subset of it, or freeform."""

    orientations: np.ndarray = field(repr=False)
    kind: str = "freeform"
    indices: np.ndarray | None = field(default=None, repr=False)  # into the flat grid

    def __post_init__(self) -> None:
        self.orientations = _orientations_to_vectors(self.orientations)
        if self.kind not in ("full-grid", "subset", "freeform"):
            raise ValueError(f"unknown layout kind {self.kind!r}")
        if self.kind in ("full-grid", "subset"):
            if self.indices is None:
                raise ValueError(f"{self.kind} layout requires grid indices")
            self.indices = np.asarray(self.indices, dtype=int)
            if self.indices.size != self.orientations.shape[0]:
                raise ValueError("index count does not match orientation count")

    @property
    def n_pixels(self) -> int:
        return self.orientations.shape[0]


def full_grid_layout(grid: SphericalGrid) -> PixelLayout:
    """Row-major enumeration of every grid sample."""
    return PixelLayout(grid.directions(), "full-grid", np.arange(grid.n_samples))


def subset_layout(grid: SphericalGrid, indices) -> PixelLayout:
    indices = np.asarray(indices, dtype=int)
    return PixelLayout(grid.directions()[indices], "subset", indices)


def freeform_layout(orientations) -> PixelLayout:
    return PixelLayout(orientations, "freeform")


@dataclass
class MeasurementSet:
    """Normalized pixel readings plus everything needed to reproduce them."""

    values: np.ndarray = field(repr=False)
    layout: PixelLayout
    sensor: SensorSpec | None
    brightness: float
    seed: int
    gain: float  # digital numbers per unit of convolved radiance
    response_hash: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.n_pixels,):
            raise ValueError(
                f"value count {self.values.shape} does not match layout with "
                f"{self.layout.n_pixels} pixels"
            )
        if self.values.min(initial=0.0) < 0.0 or self.values.max(initial=0.0) > 1.0:
            raise ValueError("measurement values must lie in [0, 1]")


# ---------------------------------------------------------------------------
# Deformations
# ---------------------------------------------------------------------------

def deform_layout(grid: SphericalGrid, deformation: str, params: dict | None = None) -> PixelLayout:
    """Freeform layout whose orientations are deformed-surface normals.

    Built-ins: ``identity``; ``ellipsoid`` (equatorial axes scaled by
    ``ratio``); ``cap`` (colatitudes compressed into a cap of half-angle
    ``angle_deg``); ``cylinder`` (normals flattened toward the equatorial
    plane by ``bend`` in [0, 1]).
    """
    params = dict(params or {})
    v = grid.directions()
    if deformation == "identity":
        n = v
    elif deformation == "ellipsoid":
        ratio = float(params.pop("ratio", 1.5))
        if ratio <= 0:
            raise ValueError(f"ellipsoid axis ratio must be positive, got {ratio}")
        # surface point (a x, a y, z) has normal direction (x/a, y/a, z)
        n = v / np.array([ratio, ratio, 1.0])
    elif deformation == "cap":
        angle = float(params.pop("angle_deg", 90.0))
        if not 0.0 < angle <= 180.0:
            raise ValueError(f"cap angle must lie in (0, 180] degrees, got {angle}")
        th = np.arccos(np.clip(v[:, 2], -1.0, 1.0)) * (angle / 180.0)
        ph = np.arctan2(v[:, 1], v[:, 0])
        n = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)
    elif deformation == "cylinder":
        bend = float(params.pop("bend", 0.5))
        if not 0.0 <= bend <= 1.0:
            raise ValueError(f"cylinder bend must lie in [0, 1], got {bend}")
        n = v * np.array([1.0, 1.0, 1.0 - bend])
    else:
        raise ValueError(f"unknown deformation {deformation!r}; expected one of {_DEFORMATIONS}")
    if params:
        raise ValueError(f"unused deformation parameters: {sorted(params)}")
    norms = np.linalg.norm(n, axis=1)
    degenerate = norms < 1e-12
    if np.any(degenerate):
        # e.g. the pole rows of a fully bent cylinder; point them at the pole
        n[degenerate] = (0.0, 0.0, 1.0)
        norms[degenerate] = 1.0
    n = n / norms[:, None]
    # The undeformed grid already repeats the polar rows (every azimuth maps
    # to the same direction there); only warn when the deformation makes
    # things worse than that.
    distinct_before = np.unique(np.round(v, 8), axis=0).shape[0]
    distinct_after = np.unique(np.round(n, 8), axis=0).shape[0]
    if distinct_after < distinct_before:
        warnings.warn(
            f"deformation {deformation!r} collapsed "
            f"{distinct_before - distinct_after} distinct orientations onto "
            "shared directions; the forward operator may be ill-conditioned",
            RuntimeWarning,
        )
    return PixelLayout(n, "freeform")


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def response_hash(response) -> str:
    """Short content hash of a response's tabulated profile."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(response.thetas).tobytes())
    h.update(np.ascontiguousarray(response.profile).tobytes())
    return h.hexdigest()[:16]


def measurement_operator(grid: SphericalGrid, response, layout: PixelLayout, gain: float = 1.0):
    """The linear map from scene samples to noiseless pixel values.

    Grid-aligned layouts use the exact spectral route (convolution theorem at
    the layout's grid nodes); freeform layouts assemble the dense quadrature
    matrix.
    """
    if response.L < grid.L:
        raise ValueError(
            f"response holds {response.L} scaling coefficients, grid needs L={grid.L}"
        )
    if layout.kind in ("full-grid", "subset"):
        if layout.kind == "full-grid" and layout.n_pixels != grid.n_samples:
            raise ValueError(
                f"full-grid layout has {layout.n_pixels} pixels but the grid has "
                f"{grid.n_samples} samples"
            )
        rows = None if layout.kind == "full-grid" else layout.indices
        return SpectralConvOperator(grid, response.scaling_coeffs[: grid.L], rows, gain)
    return DenseOperator.build(grid, response, layout.orientations, gain)


def _reference_peak(scene: SphericalSignal) -> float:
    """Brightest full-grid value under the reference open cosine aperture."""
    ref = maskdesign.open_aperture_response(REFERENCE_APERTURE_DEG, scene.grid.L)
    op = SpectralConvOperator(scene.grid, ref.scaling_coeffs)
    return float(op.forward(scene.values).max(initial=0.0))


def apply_sensor_noise(expected_electrons: np.ndarray, sensor: SensorSpec, seed: int) -> np.ndarray:
    """Poisson photon noise plus Gaussian readout noise, clipped to the well."""
    rng = np.random.Generator(np.random.Philox(seed))
    e = np.maximum(np.asarray(expected_electrons, dtype=float), 0.0)
    noisy = rng.poisson(e).astype(float)
    noisy += rng.normal(0.0, sensor.readout_sigma, size=e.shape)
    return np.clip(noisy, 0.0, sensor.full_well)


def simulate(
    scene: SphericalSignal,
    response,
    layout: PixelLayout,
    sensor: SensorSpec | None,
    brightness: float,
    seed: int = 0,
    noiseless: bool = False,
) -> MeasurementSet:
    """Measure a bandlimited scene through a response with sensor noise.

    ``sensor=None`` (or ``noiseless=True``) skips the noise model and returns
    clipped noiseless digital numbers.
    """
    if not 0.0 < brightness <= 1.0:
        raise ValueError(f"brightness must lie in (0, 1], got {brightness}")
    if np.iscomplexobj(scene.values):
        raise ValueError("scenes must be real-valued")
    peak = _reference_peak(scene)
    gain = brightness / peak if peak > 0.0 else 0.0
    op = measurement_operator(scene.grid, response, layout, gain)
    dn = op.forward(scene.values)
    if sensor is None or noiseless:
        values = np.clip(dn, 0.0, 1.0)
    else:
        electrons = np.clip(dn, 0.0, None) * sensor.full_well
        values = apply_sensor_noise(electrons, sensor, seed) / sensor.full_well
    return MeasurementSet(
        values=values,
        layout=layout,
        sensor=None if noiseless else sensor,
        brightness=brightness,
        seed=seed,
        gain=gain,
        response_hash=response_hash(response),
    )


def subsample(m: MeasurementSet, fraction: float, seed: int = 0) -> MeasurementSet:
    """Keep a uniformly random, order-preserving subset of a full-grid set."""
    if m.layout.kind != "full-grid":
        raise ValueError(f"subsampling requires a full-grid measurement set, got {m.layout.kind!r}")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = m.layout.n_pixels
    keep = max(1, int(round(fraction * n)))
    rng = np.random.Generator(np.random.Philox(seed))
    chosen = np.sort(rng.choice(n, size=keep, replace=False))
    layout = PixelLayout(m.layout.orientations[chosen], "subset", m.layout.indices[chosen])
    return MeasurementSet(
        values=m.values[chosen],
        layout=layout,
        sensor=m.sensor,
        brightness=m.brightness,
        seed=m.seed,
        gain=m.gain,
        response_hash=m.response_hash,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def save_measurements(m: MeasurementSet, path, extra_header: dict | None = None) -> None:
    """CSV "theta,phi,value" with a '#'-prefixed key=value header."""
    lines = []
    header = {
        "kind": m.layout.kind,
        "brightness": _fmt(m.brightness),
        "seed": str(int(m.seed)),
        "gain": _fmt(m.gain),
        "response_hash": m.response_hash,
    }
    if m.sensor is None:
        header["sensor"] = "ideal"
    else:
        header["full_well"] = _fmt(m.sensor.full_well)
        header["dynamic_range_db"] = _fmt(m.sensor.dynamic_range_db)
    for k, v in (extra_header or {}).items():
        header[k] = str(v)
    for k, v in header.items():
        lines.append(f"# {k}={v}")
    lines.append("theta,phi,value")
    v = m.layout.orientations
    thetas = np.arccos(np.clip(v[:, 2], -1.0, 1.0))
    phis = np.mod(np.arctan2(v[:, 1], v[:, 0]), 2.0 * np.pi)
    for th, ph, val in zip(thetas, phis, m.values):
        lines.append(f"{_fmt(th)},{_fmt(ph)},{_fmt(val)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _match_grid_indices(thetas, phis, grid: SphericalGrid) -> np.ndarray | None:
    """Map (theta, phi) pairs to flat grid indices; None if any is off-grid."""
    W = grid.n_phi
    t = np.rint((thetas * W / np.pi - 1.0) / 2.0).astype(int)
    p = np.rint(phis * W / (2.0 * np.pi)).astype(int) % W
    ok = (t >= 0) & (t < grid.L)
    if not np.all(ok):
        return None
    if not (
        np.allclose(grid.thetas[t], thetas, atol=1e-9)
        and np.allclose(grid.phis[p], phis, atol=1e-9)
    ):
        return None
    return t * W + p


def load_measurements(path, grid: SphericalGrid | None = None) -> tuple[MeasurementSet, dict]:
    """Read a measurement CSV; returns the set plus the raw header dict.

    With ``grid`` given, grid-aligned kinds reattach their sample indices by
    matching angles to grid nodes.
    """
    header: dict[str, str] = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line.lstrip("# ").partition("=")
                header[k] = v
                continue
            if line == "theta,phi,value":
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"malformed measurement row: {line!r}")
            rows.append([float(x) for x in parts])
    if not rows:
        raise ValueError(f"measurement file {path} contains no samples")
    arr = np.array(rows)
    thetas, phis, values = arr[:, 0], arr[:, 1], arr[:, 2]
    kind = header.get("kind", "freeform")
    indices = None
    if grid is not None and kind in ("full-grid", "subset"):
        indices = _match_grid_indices(thetas, phis, grid)
        if indices is None:
            raise ValueError(
                f"measurement file claims kind={kind!r} but its angles do not "
                f"sit on the L={grid.L} grid"
            )
    if kind in ("full-grid", "subset") and indices is None:
        kind = "freeform"  # no grid supplied: fall back to raw orientations
    layout = PixelLayout(np.stack([thetas, phis], axis=1), kind, indices)
    sensor = None
    if header.get("sensor") != "ideal" and "full_well" in header:
        sensor = SensorSpec(float(header["full_well"]), float(header["dynamic_range_db"]))
    m = MeasurementSet(
        values=values,
        layout=layout,
        sensor=sensor,
        brightness=float(header.get("brightness", 1.0)),
        seed=int(header.get("seed", 0)),
        gain=float(header.get("gain", 0.0)),
        response_hash=header.get("response_hash", ""),
    )
    return m, header


def save_layout(layout: PixelLayout, path) -> None:
    """CSV of unit orientation vectors."""
    lines = ["x,y,z"]
    for v in layout.orientations:
        lines.append(f"{_fmt(v[0])},{_fmt(v[1])},{_fmt(v[2])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_layout(path) -> PixelLayout:
    vecs = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "x,y,z":
            raise ValueError(f"malformed layout file: expected 'x,y,z' header, got {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            vecs.append([float(x) for x in line.split(",")])
    return PixelLayout(np.array(vecs), "freeform")

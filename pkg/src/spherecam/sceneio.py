"""Equirectangular scene rasters and their resampling onto the sphere.

A raster row r is centered at colatitude ``theta_r = pi (2 r + 1) / (2 H - 1)``
and a column c at azimuth ``phi_c = 2 pi c / W`` — the same family of nodes as
the sampling grid, so an L x (2L-1) raster passes through ``raster_to_grid``
unchanged.  Resampling in both directions is bilinear with periodic wraparound
in phi and clamping in theta.

Pixel data is linear intensity in [0, 1] (no transfer function); files are
portable gray/pix maps (P2/P3 ASCII, P5/P6 binary, 8- or 16-bit) or raw
``.npy`` float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sphharm import SphericalSignal, make_grid

__all__ = [
    "SceneRaster",
    "raster_to_grid",
    "grid_to_raster",
    "save_raster",
    "load_raster",
]


@dataclass
class SceneRaster:
    """A height x width (x 3) array of linear intensities in [0, 1]."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim == 3 and self.data.shape[2] == 1:
            self.data = self.data[:, :, 0]
        if self.data.ndim not in (2, 3):
            raise ValueError(f"raster data must be 2-d or 3-d, got shape {self.data.shape}")
        if self.data.ndim == 3 and self.data.shape[2] != 3:
            raise ValueError(f"color rasters need 3 channels, got {self.data.shape[2]}")
        if self.height < 1 or self.width < 1:
            raise ValueError(f"degenerate raster dimensions {self.height}x{self.width}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("raster data must be finite")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("raster data must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def channel(self, i: int) -> np.ndarray:
        return self.data if self.data.ndim == 2 else self.data[:, :, i]


def _sample_equiangular(data: np.ndarray, thetas: np.ndarray, phis: np.ndarray) -> np.ndarray:
    """Bilinear lookup of an (H, W) node array at arbitrary angles.

    Rows are the theta nodes of an H-row raster/grid (clamped at both ends),
    columns the phi nodes (periodic).
    """
    H, W = data.shape
    r = ((2 * H - 1) * np.asarray(thetas, dtype=float) / np.pi - 1.0) / 2.0
    r = np.clip(r, 0.0, H - 1.0)
    r0 = np.floor(r).astype(int)
    r1 = np.minimum(r0 + 1, H - 1)
    fr = r - r0
    c = np.asarray(phis, dtype=float) * W / (2.0 * np.pi)
    cf = np.floor(c)
    fc = c - cf
    c0 = cf.astype(int) % W
    c1 = (c0 + 1) % W
    top = data[r0, c0] * (1.0 - fc) + data[r0, c1] * fc
    bottom = data[r1, c0] * (1.0 - fc) + data[r1, c1] * fc
    return top * (1.0 - fr) + bottom * fr


def raster_to_grid(raster: SceneRaster, L: int) -> list[SphericalSignal]:
    """Resample a raster onto the L x (2L-1) grid, one signal per channel."""
    grid = make_grid(L)
    th = np.repeat(grid.thetas, grid.n_phi)
    ph = np.tile(grid.phis, grid.L)
    out = []
    for i in range(raster.channels):
        values = _sample_equiangular(raster.channel(i), th, ph).reshape(grid.shape)
        out.append(SphericalSignal(grid, values))
    return out


def grid_to_raster(signals, width: int, height: int) -> SceneRaster:
    """Resample grid signals (one, or a list of three) into a raster.

    Inputs must already lie in [0, 1]; clip reconstructed scenes first.
    """
    if isinstance(signals, SphericalSignal):
        signals = [signals]
    if len(signals) not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got {len(signals)}")
    if height < 1 or width < 1:
        raise ValueError(f"degenerate raster dimensions {height}x{width}")
    th = np.repeat(np.pi * (2 * np.arange(height) + 1) / (2 * height - 1), width)
    ph = np.tile(2.0 * np.pi * np.arange(width) / width, height)
    planes = [
        _sample_equiangular(np.asarray(s.values, dtype=float), th, ph).reshape(height, width)
        for s in signals
    ]
    return SceneRaster(planes[0] if len(planes) == 1 else np.stack(planes, axis=2))


# ---------------------------------------------------------------------------
# File containers
# ---------------------------------------------------------------------------

def _pnm_tokens(buf: bytes):
    """Yield whitespace-separated header tokens, skipping '#' comments."""
    i = 0
    n = len(buf)
    while i < n:
        ch = buf[i : i + 1]
        if ch in b" \t\r\n":
            i += 1
        elif ch == b"#":
            while i < n and buf[i : i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < n and buf[j : j + 1] not in b" \t\r\n":
                j += 1
            yield buf[i:j], j
            i = j


def _load_pnm(buf: bytes) -> SceneRaster:
    tokens = _pnm_tokens(buf)
    try:
        magic, _ = next(tokens)
        magic = magic.decode("ascii")
        if magic not in ("P2", "P3", "P5", "P6"):
            raise ValueError(f"unsupported raster magic {magic!r}")
        (w, _), (h, _), (maxval, end) = next(tokens), next(tokens), next(tokens)
        width, height, maxval = int(w), int(h), int(maxval)
    except StopIteration:
        raise ValueError("truncated raster header") from None
    if maxval not in (255, 65535):
        raise ValueError(f"unsupported maxval {maxval}; expected 255 or 65535")
    channels = 3 if magic in ("P3", "P6") else 1
    count = width * height * channels
    if magic in ("P2", "P3"):
        flat = np.array([int(t) for t, _ in tokens], dtype=float)
        if flat.size != count:
            raise ValueError(f"expected {count} samples, found {flat.size}")
    else:
        data = buf[end + 1 :]  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
        if len(data) < count * dtype.itemsize:
            raise ValueError("truncated raster payload")
        flat = np.frombuffer(data[: count * dtype.itemsize], dtype=dtype).astype(float)
    if flat.min(initial=0.0) < 0 or flat.max(initial=0.0) > maxval:
        raise ValueError(f"sample values exceed maxval {maxval}")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return SceneRaster(flat.reshape(shape) / maxval)


def load_raster(path) -> SceneRaster:
    """Read a PGM/PPM (any of P2/P3/P5/P6) or .npy raster as linear [0, 1]."""
    path = Path(path)
    if path.suffix == ".npy":
        return SceneRaster(np.load(path))
    return _load_pnm(path.read_bytes())


def save_raster(raster: SceneRaster, path, bits: int = 8) -> None:
    """Write .pgm (gray, P5), .ppm (color, P6) or .npy picked by suffix."""
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, raster.data)
        return
    if bits not in (8, 16):
        raise ValueError(f"bit depth must be 8 or 16, got {bits}")
    if path.suffix == ".pgm":
        if raster.channels != 1:
            raise ValueError("a .pgm file holds a single channel; got a color raster")
        magic = "P5"
    elif path.suffix == ".ppm":
        if raster.channels != 3:
            raise ValueError("a .ppm file holds 3 channels; got a gray raster")
        magic = "P6"
    else:
        raise ValueError(f"unsupported raster suffix {path.suffix!r}; use .pgm/.ppm/.npy")
    maxval = (1 << bits) - 1
    dtype = np.dtype("u1") if bits == 8 else np.dtype(">u2")
    quantized = np.rint(raster.data * maxval).astype(dtype)
    header = f"{magic}\n{raster.width} {raster.height}\n{maxval}\n".encode("ascii")
    path.write_bytes(header + quantized.tobytes())

"""Linear measurement operators shared by simulation and reconstruction.

Two concrete forms of the imaging map Phi (scene samples -> pixel values):

* :class:`SpectralConvOperator` — analysis, per-degree scaling, synthesis,
  optional row selection.  Exact for bandlimited scenes on grid-aligned
  layouts (full grid or subsets of it), with an exact adjoint built from the
  transposed Legendre blocks.
* :class:`DenseOperator` — explicit matrix ``Phi[i, j] = w_j * g(angle)`` for
  arbitrarily oriented (deformed) layouts; adjoint is the transpose.

Both expose ``forward(values2d) -> (n,)`` and ``adjoint(y) -> values2d`` on
real arrays, plus a power-iteration largest-eigenvalue estimate used for
solver step sizes.
"""

from __future__ import annotations

import numpy as np

from .sphharm import SphericalGrid, _get_plan

__all__ = ["SpectralConvOperator", "DenseOperator", "power_lipschitz"]


class SpectralConvOperator:
    """Isotropic convolution (+ optional sample selection) as a linear map."""

    def __init__(self, grid: SphericalGrid, scaling, rows=None, gain: float = 1.0):
        self.grid = grid
        self.scaling = np.asarray(scaling, dtype=float)
        if self.scaling.shape != (grid.L,):
            raise ValueError(
                f"scaling length {self.scaling.shape} does not match grid bandlimit L={grid.L}"
            )
        self.rows = None if rows is None else np.asarray(rows, dtype=int)
        if self.rows is not None and (
            self.rows.min(initial=0) < 0 or self.rows.max(initial=-1) >= grid.n_samples
        ):
            raise ValueError("row subset indices fall outside the grid")
        self.gain = float(gain)
        self._plan = _get_plan(grid.L)

    @property
    def n_out(self) -> int:
        return self.grid.n_samples if self.rows is None else self.rows.size

    def with_gain(self, gain: float) -> "SpectralConvOperator":
        return SpectralConvOperator(self.grid, self.scaling, self.rows, gain)

    def forward(self, values: np.ndarray) -> np.ndarray:
        table = self._plan.analyze(np.asarray(values, dtype=float))
        table *= self.scaling[:, None]
        out = self._plan.synthesize(table).real.reshape(-1)
        if self.rows is not None:
            out = out[self.rows]
        return self.gain * out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n_out,):
            raise ValueError(f"adjoint input length {y.shape} does not match {self.n_out} outputs")
        full = np.zeros(self.grid.n_samples)
        if self.rows is None:
            full[:] = y
        else:
            np.add.at(full, self.rows, y)
        table = self._plan.synthesize_adjoint(full.reshape(self.grid.shape).astype(complex))
        table *= self.scaling[:, None]
        return self.gain * self._plan.analyze_adjoint(table).real


class DenseOperator:
    """Explicit measurement matrix for freeform pixel layouts."""

    def __init__(self, matrix: np.ndarray, grid: SphericalGrid):
        self.matrix = np.asarray(matrix, dtype=float)
        self.grid = grid
        if self.matrix.ndim != 2 or self.matrix.shape[1] != grid.n_samples:
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match grid sample count {grid.n_samples}"
            )

    @classmethod
    def build(cls, grid: SphericalGrid, response, orientations, gain: float = 1.0) -> "DenseOperator":
        """Assemble Phi[i, j] = w_j * g_L(arccos(r_i . s_j)).

        The response is evaluated through its zonal synthesis truncated at
        the grid bandlimit, so the matrix models the same bandlimited chain
        as the spectral operator.
        """
        from .convolution import _orientations_to_vectors

        r = _orientations_to_vectors(orientations)
        s = grid.directions()
        w = np.repeat(grid.weights, grid.n_phi)
        matrix = np.empty((r.shape[0], grid.n_samples))
        # row blocks keep the per-angle Legendre table from ballooning
        for lo in range(0, r.shape[0], 64):
            block = r[lo : lo + 64]
            ang = np.arccos(np.clip(block @ s.T, -1.0, 1.0))
            gv = response.eval_bandlimited(ang.reshape(-1), grid.L).reshape(ang.shape)
            matrix[lo : lo + 64] = gain * gv * w[None, :]
        return cls(matrix, grid)

    @property
    def n_out(self) -> int:
        return self.matrix.shape[0]

    def with_gain(self, gain: float) -> "DenseOperator":
        return DenseOperator(gain * self.matrix, self.grid)

    def forward(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(values, dtype=float).reshape(-1)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n_out,):
            raise ValueError(f"adjoint input length {y.shape} does not match {self.n_out} outputs")
        return (self.matrix.T @ y).reshape(self.grid.shape)


def power_lipschitz(op, n_iter: int = 20, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue of Phi^T Phi."""
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal(op.grid.shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = op.adjoint(op.forward(v))
        lam = float(np.linalg.norm(w.reshape(-1)))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam

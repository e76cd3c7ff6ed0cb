"""Gram-matrix accumulation and spectral diversity of played features."""

import numpy as np

from .errors import NumericalError

TOL_EIG = 1e-9  # eigenvalues in [-TOL_EIG, 0) clamp to 0; below raises


class GramAccumulator:
    """Running sum of feature outer products.

    Single-writer. `snapshot()` returns an independent copy that other
    threads may read freely.
    """

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.matrix = np.zeros((self.dim, self.dim))
        self.count = 0

    def absorb(self, feature) -> "GramAccumulator":
        f = np.asarray(feature, dtype=float)
        if f.shape != (self.dim,):
            raise ValueError(f"feature shape {f.shape} does not match dim {self.dim}")
        self.matrix += np.outer(f, f)
        self.count += 1
        return self

    def snapshot(self) -> "GramAccumulator":
        copy = GramAccumulator(self.dim)
        copy.matrix = self.matrix.copy()
        copy.count = self.count
        return copy

    def min_eigen(self) -> float:
        """Smallest eigenvalue of the accumulated matrix, clamped to >= 0."""
        sym = 0.5 * (self.matrix + self.matrix.T)
        try:
            lam = float(np.linalg.eigvalsh(sym)[0])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "eigen solver failed to converge: "
                f"trace={np.trace(sym):.6g}, max|entry|={np.abs(sym).max():.6g}, count={self.count}"
            ) from exc
        if lam < -TOL_EIG:
            raise NumericalError(
                f"Gram matrix reports eigenvalue {lam:.3e} < -{TOL_EIG:g}; "
                "a sum of outer products cannot be meaningfully negative "
                f"(count={self.count}, trace={np.trace(sym):.6g})"
            )
        return max(lam, 0.0)

    def diag_min(self) -> float:
        """Minimum diagonal entry (the Hadamard-with-identity variant)."""
        return float(self.matrix.diagonal().min())

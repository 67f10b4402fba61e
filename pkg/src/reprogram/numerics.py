"""Dense linear algebra and differentiable-loss primitives.

All public operations work on 64-bit float numpy arrays, validate their
inputs, and are deterministic (sequential numpy reductions, no threading
assumptions beyond BLAS determinism for fixed shapes).
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix contains NaN or Inf")
    return m


def as_vector(v) -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting non-finite entries."""
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got ndim={x.ndim}")
    if not np.all(np.isfinite(x)):
        raise NumericError("vector contains NaN or Inf")
    return x


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape validation."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD: u (m x r), singular_values descending, vt (r x n)."""

    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.singular_values) @ self.vt


def thin_svd(a) -> SvdResult:
    """Thin singular value decomposition, rank r = min(m, n).

    Singular values are non-negative and sorted descending; u columns and
    vt rows are orthonormal.
    """
    a = as_matrix(a)
    if a.size == 0:
        raise ShapeError("cannot decompose an empty matrix")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return SvdResult(u=u, singular_values=s, vt=vt)


def softmax(logits) -> np.ndarray:
    """Shift-invariant softmax over a logit vector."""
    z = as_vector(logits)
    if z.size == 0:
        raise ShapeError("softmax of an empty vector")
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


def cross_entropy(probs, label: int) -> float:
    """Negative log-probability of the given class index."""
    p = as_vector(probs)
    if not 0 <= label < p.size:
        raise IndexError(f"label {label} out of range for {p.size} classes")
    return float(-np.log(p[label]))

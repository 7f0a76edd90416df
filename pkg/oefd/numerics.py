"""Dense float64 arithmetic, seeded randomness and the finite-difference oracle."""
import logging
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-12
DEFAULT_FD_STEP = 1e-5

# A Matrix is a 2-D, C-ordered float64 ndarray whose elements are all finite.
Matrix = np.ndarray


def as_matrix(values: Any, name: str = "matrix") -> Matrix:
    """Validates and converts ``values`` into a finite float64 matrix."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(m))[0])
        raise NumericalError(f"{name} has a non-finite element at {bad}")
    return m


def as_vector(values: Any, name: str = "vector") -> np.ndarray:
    v = np.ascontiguousarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"{name} has a non-finite element at index {int(np.argmax(~np.isfinite(v)))}")
    return v


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError.mismatch("matmul", a.shape, b.shape)
    return a @ b


def row_norms(m: Matrix) -> np.ndarray:
    """Euclidean norm of every row (the radial component of each embedding)."""
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def normalize_rows(m: Matrix, eps: float = DEFAULT_EPS) -> Matrix:
    """Divides every row by max(norm, eps); zero rows stay zero."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return m / np.maximum(row_norms(m), eps)[:, None]


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                               h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``x`` may have any shape; the result has the same shape.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = np.array(x, dtype=np.float64)
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        f_plus = float(f(base))
        flat[i] = saved - h
        f_minus = float(f(base))
        flat[i] = saved
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(f"non-finite function value while differencing coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(base.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error, ||a - n|| / max(||a||, ||n||, floor)."""
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


class RandomSource:
    """Counter-based (Philox) random source, splittable by stream index.

    Streams are derived from the seed through a SeedSequence spawn key, so
    ``RandomSource(seed).stream(3)`` is the same on every run and platform.
    """

    def __init__(self, seed: int, spawn_key: Tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._bit_generator = np.random.Philox(sequence)
        self.generator = np.random.Generator(self._bit_generator)

    def stream(self, index: int) -> "RandomSource":
        return RandomSource(self.seed, self.spawn_key + (int(index),))

    # Thin wrappers so callers never reach into numpy's global state.
    def uniform(self, low: float, high: float, size: Optional[Sequence[int]] = None) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def normal(self, size: Optional[Sequence[int]] = None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def unit_vectors(self, count: int, dim: int) -> Matrix:
        """Rows drawn uniformly from the unit sphere."""
        draws = self.generator.standard_normal((count, dim))
        return normalize_rows(draws)

    def get_state(self) -> Dict[str, Any]:
        """JSON-friendly snapshot of the full generator state."""
        state = self._bit_generator.state
        return {
            "seed": self.seed,
            "spawn_key": list(self.spawn_key),
            "counter": [int(v) for v in state["state"]["counter"]],
            "key": [int(v) for v in state["state"]["key"]],
            "buffer": [int(v) for v in state["buffer"]],
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    @classmethod
    def from_state(cls, snapshot: Dict[str, Any]) -> "RandomSource":
        source = cls(snapshot["seed"], tuple(snapshot.get("spawn_key", ())))
        source._bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(snapshot["counter"], dtype=np.uint64),
                "key": np.array(snapshot["key"], dtype=np.uint64),
            },
            "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
            "buffer_pos": int(snapshot["buffer_pos"]),
            "has_uint32": int(snapshot["has_uint32"]),
            "uinteger": int(snapshot["uinteger"]),
        }
        return source

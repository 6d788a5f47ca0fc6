"""Change vector analysis (CVA) between consecutive frames."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import ChangeMask, Frame
from .errors import ConfigError, DimensionError


def _matrix(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return frame.matrix.astype(np.float64)
    a = np.asarray(frame, dtype=np.float64)
    return a.reshape(a.shape[0], -1) if a.ndim == 3 else np.atleast_2d(a)


def cva_magnitude(current, previous) -> np.ndarray:
    """Per-pixel Euclidean norm of the spectral change vector."""
    a, b = _matrix(current), _matrix(previous)
    if a.shape != b.shape:
        raise DimensionError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return np.sqrt(np.sum((a - b) ** 2, axis=0))


def cva_detect(magnitudes, tau: float, shape: tuple[int, int] | None = None, t: int = 2) -> ChangeMask:
    """Flag pixels whose magnitude strictly exceeds ``tau``."""
    if not tau >= 0:
        raise ConfigError(f"CVA threshold must be >= 0, got {tau}")
    m = np.asarray(magnitudes, dtype=float)
    flags = (m > tau).astype(np.uint8)
    return ChangeMask(flags.reshape(shape) if shape else flags, t=t)


@dataclass
class CvaState:
    """Memoryless streaming CVA: keeps only the previous frame."""

    tau: float
    previous: np.ndarray | None = None
    t: int = 0

    def __post_init__(self):
        if not self.tau >= 0:
            raise ConfigError(f"CVA threshold must be >= 0, got {self.tau}")

    def update(self, frame) -> tuple[np.ndarray, np.ndarray] | None:
        """Return ``(magnitudes, flags)`` for every frame after the first."""
        Y = _matrix(frame)
        if not np.all(np.isfinite(Y)):
            raise ConfigError("frame contains non-finite values")
        prev, self.previous = self.previous, Y
        self.t += 1
        if prev is None:
            return None
        mag = cva_magnitude(Y, prev)
        return mag, (mag > self.tau).astype(np.uint8)


def sequence_magnitudes(data: np.ndarray) -> np.ndarray:
    """CVA magnitudes for frames 2..T of a ``(T, L, H, W)`` array, shape ``(T-1, N)``."""
    d = np.asarray(data, dtype=np.float64)
    diff = np.diff(d.reshape(d.shape[0], d.shape[1], -1), axis=0)
    return np.sqrt(np.sum(diff * diff, axis=1))

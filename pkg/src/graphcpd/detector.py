"""Online change-point detection on a superpixel graph.

Two exponential moving averages of the frames are tracked, a slow one
(rate ``lambda``) and a fast one (rate ``Lambda``). Their difference is
filtered on the graph band by band, summed over each vertex's closed
neighborhood, squared and summed over bands. Under the null this statistic
is ``sigma_R^2(n)`` times a chi-squared variable with ``L`` degrees of
freedom, and each vertex is tested at level ``alpha / N``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataio import ChangeMask, Frame, ImageSequence, Labeling, write_csv
from .errors import ConfigError, DimensionError
from .graphcore import build_graph, clique_filter_apply, clique_sigma_R_sq
from .specfun import chi2_isf
from .superpixel import SuperpixelParams, slic_segment


class DegenerateGraphWarning(UserWarning):
    """Some vertices have zero null variance and can never be flagged."""


@dataclass(frozen=True)
class DetectorConfig:
    slow_rate: float
    fast_rate: float
    gamma: float
    alpha: float
    sigma2: float
    burn_in: int = 0

    def __post_init__(self):
        if not 0 < self.slow_rate < self.fast_rate < 1:
            raise ConfigError(
                f"rates must satisfy 0 < lambda < Lambda < 1, got lambda={self.slow_rate}, Lambda={self.fast_rate}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.sigma2 > 0:
            raise ConfigError(f"sigma2 must be > 0, got {self.sigma2}")
        if int(self.burn_in) != self.burn_in or self.burn_in < 0:
            raise ConfigError(f"burn_in must be an integer >= 0, got {self.burn_in}")

    @property
    def eta(self) -> float:
        return eta(self.slow_rate, self.fast_rate)


@dataclass(frozen=True, eq=False)
class DetectorState:
    """Slow average ``V``, fast average ``V_fast`` (both ``L x N``) and frame index ``t``."""

    V: np.ndarray
    V_fast: np.ndarray
    t: int = 1

    @classmethod
    def initial(cls, frame) -> "DetectorState":
        Y = _frame_matrix(frame)
        return cls(Y.copy(), Y.copy(), 1)


@dataclass(frozen=True, eq=False)
class TestStatistics:
    __test__ = False

    t: int
    r: np.ndarray
    sigma_R_sq: np.ndarray
    xi: np.ndarray
    p_n: float
    flags: np.ndarray

    def mask(self, shape: tuple[int, int]) -> ChangeMask:
        return ChangeMask(self.flags.reshape(shape), t=self.t)

    @property
    def normalized(self) -> np.ndarray:
        """``r / sigma_R^2`` with untestable vertices set to 0."""
        out = np.zeros_like(self.r)
        ok = self.sigma_R_sq > 0
        out[ok] = self.r[ok] / self.sigma_R_sq[ok]
        return out


def _frame_matrix(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return frame.matrix.astype(np.float64)
    a = np.asarray(frame, dtype=np.float64)
    return a.reshape(a.shape[0], -1) if a.ndim == 3 else np.atleast_2d(a)


def ema_update(state: DetectorState, frame, slow_rate: float, fast_rate: float) -> DetectorState:
    Y = _frame_matrix(frame)
    if Y.shape != state.V.shape:
        raise DimensionError(f"frame shape {Y.shape} does not match state {state.V.shape}")
    # V + rate * (Y - V) leaves V unchanged exactly when Y == V
    return DetectorState(state.V + slow_rate * (Y - state.V),
                         state.V_fast + fast_rate * (Y - state.V_fast),
                         state.t + 1)


def difference(state: DetectorState) -> np.ndarray:
    return state.V_fast - state.V


def eta(slow_rate: float, fast_rate: float) -> float:
    """Asymptotic variance factor of the difference of the two averages under unit iid noise."""
    lam, Lam = slow_rate, fast_rate
    if not (0 < lam < 1 and 0 < Lam < 1):
        raise ConfigError(f"rates must lie in (0, 1), got {lam}, {Lam}")
    return lam / (2 - lam) + Lam / (2 - Lam) - 2 * lam * Lam / (lam + Lam - lam * Lam)


def thresholds(sigma_R_sq, bands: int, alpha: float, n_vertices: int) -> np.ndarray:
    """Bonferroni thresholds ``sigma_R^2(n) * F^{-1}_{chi2_L}(1 - alpha / N)``."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    s = np.asarray(sigma_R_sq, dtype=float)
    if np.any(s < 0):
        raise ConfigError("sigma_R^2 must be >= 0")
    return s * chi2_isf(bands, alpha / n_vertices)


def statistic(D, labels, gamma: float) -> np.ndarray:
    """Per-vertex statistic on a superpixel clique graph using the O(N) filter."""
    D = np.atleast_2d(D)
    g = clique_filter_apply(labels, gamma, D)
    lab = labels.flat if isinstance(labels, Labeling) else np.asarray(labels).reshape(-1)
    sums = np.stack([np.bincount(lab, row, lab.max() + 1) for row in g])[:, lab]
    return np.sum(sums * sums, axis=0)


def step(state: DetectorState, frame, config: DetectorConfig, labels, sigma_R_sq, xi):
    """Advance the state by one frame and test every vertex.

    Returns the new state and the frame's ``TestStatistics``.
    """
    new = ema_update(state, frame, config.slow_rate, config.fast_rate)
    r = statistic(difference(new), labels, config.gamma)
    flags = (r > xi) & (sigma_R_sq > 0) & (new.t > config.burn_in)
    N = r.size
    return new, TestStatistics(new.t, r, sigma_R_sq, xi, config.alpha / N, flags.astype(np.uint8))


def estimate_noise(frames, prefix: int | None = None) -> float:
    """Robust per-entry noise variance from temporal first differences.

    Per band, the MAD-based scale ``1.4826 * median|diff|`` of all first
    differences over the prefix is squared; the band average is halved
    because a difference of two iid noises has twice their variance.
    """
    data = frames.data if isinstance(frames, ImageSequence) else np.asarray(frames)
    if prefix is not None:
        data = data[:prefix]
    if data.shape[0] < 2:
        raise ConfigError(f"noise estimation needs at least 2 frames, got {data.shape[0]}")
    diffs = np.diff(data.astype(np.float64), axis=0)
    L = diffs.shape[1]
    per_band = diffs.transpose(1, 0, 2, 3).reshape(L, -1)
    scale = 1.4826 * np.median(np.abs(per_band), axis=1)
    return float(np.mean(scale ** 2) / 2.0)


@dataclass
class ChangeDetector:
    """Streaming engine: feed frames in order with ``update``.

    The first frame only initializes the averages; every later frame returns
    its ``TestStatistics``. Decisions are never revised.
    """

    config: DetectorConfig
    labeling: Labeling
    bands: int
    state: DetectorState | None = field(default=None, init=False)
    sigma_R_sq: np.ndarray = field(init=False)
    xi: np.ndarray = field(init=False)

    def __post_init__(self):
        if not isinstance(self.labeling, Labeling):
            self.labeling = Labeling(np.asarray(self.labeling))
        N = self.labeling.flat.size
        self.sigma_R_sq = clique_sigma_R_sq(self.labeling, self.config.eta, self.config.sigma2)
        self.xi = thresholds(self.sigma_R_sq, self.bands, self.config.alpha, N)
        dead = int(np.sum(self.sigma_R_sq == 0))
        if dead:
            warnings.warn(f"{dead} of {N} vertices have zero null variance; the graph admits no "
                          "testable direction there and they will never be flagged",
                          DegenerateGraphWarning, stacklevel=2)

    @classmethod
    def from_first_frame(cls, config: DetectorConfig, frame: Frame, params: SuperpixelParams):
        return cls(config, slic_segment(frame, params), frame.bands)

    @property
    def graph(self):
        return build_graph(self.labeling)

    @property
    def n_vertices(self) -> int:
        return self.labeling.flat.size

    def update(self, frame) -> TestStatistics | None:
        Y = _frame_matrix(frame)
        if Y.shape != (self.bands, self.n_vertices):
            raise DimensionError(f"frame shape {Y.shape} does not match ({self.bands}, {self.n_vertices})")
        if self.state is None:
            self.state = DetectorState.initial(Y)
            return None
        self.state, stats = step(self.state, Y, self.config, self.labeling.flat, self.sigma_R_sq, self.xi)
        return stats

    def run(self, sequence) -> list[TestStatistics]:
        out = []
        for frame in sequence:
            stats = self.update(frame)
            if stats is not None:
                out.append(stats)
        return out


def detect_sequence(sequence: ImageSequence, config: DetectorConfig, params: SuperpixelParams | None = None,
                    labeling: Labeling | None = None) -> tuple[Labeling, list[TestStatistics]]:
    """Run the full pipeline: segment frame 1 (unless a labeling is given), then stream."""
    if labeling is None:
        if params is None:
            raise ConfigError("either a labeling or superpixel parameters are required")
        labeling = slic_segment(sequence.frame(1), params)
    T, L, H, W = sequence.data.shape
    if labeling.shape != (H, W):
        raise DimensionError(f"labeling shape {labeling.shape} does not match frames ({H}, {W})")
    det = ChangeDetector(config, labeling, L)
    return labeling, det.run(sequence)


def write_statistics_csv(stats: list[TestStatistics], path) -> None:
    """Per-frame, per-vertex CSV with columns ``t, n, r, xi, flag`` (``n`` is 1-based)."""
    def rows():
        for s in stats:
            for n in range(s.r.size):
                yield s.t, n + 1, repr(float(s.r[n])), repr(float(s.xi[n])), int(s.flags[n])
    write_csv(path, ("t", "n", "r", "xi", "flag"), rows())


__all__ = [
    "DegenerateGraphWarning", "DetectorConfig", "DetectorState", "TestStatistics", "ChangeDetector",
    "ema_update", "difference", "eta", "thresholds", "statistic", "step", "estimate_noise",
    "detect_sequence", "write_statistics_csv",
]

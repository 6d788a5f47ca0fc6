"""Synthetic sequences, detection metrics and the Monte Carlo harness.

Sequences follow ``Y_t = Q + 1[t >= t_c] * Delta + E_t`` with iid Gaussian
``E_t``. The change is supported on whole superpixels of the scene labeling
and each pixel changes at most once.

Conventions used throughout:

* per-frame arrays cover frames ``2..T`` (row ``i`` is frame ``i + 2``);
  frame 1 carries no decision and is never scored;
* the change-point estimate of a run is the first frame with any flag;
* the false-alarm probability of the delay protocol is per run: a run is a
  false alarm when anything is flagged before the true change.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .baselines import sequence_magnitudes
from .config import Settings
from .dataio import ImageSequence, Labeling, write_csv
from .detector import ChangeDetector, DetectorConfig
from .errors import ConfigError, DimensionError
from .specfun import chi2_isf, chi2_sf
from .superpixel import SuperpixelParams, slic_segment

log = logging.getLogger(__name__)

METHODS = ("dagfss", "cva")


@dataclass(frozen=True, eq=False)
class SimulatorConfig:
    """Background ``(L, H, W)``, change ``(L, H, W)``, change frame(s), noise variance, length.

    ``change_frame`` is a single frame index or an ``(H, W)`` array giving
    each pixel its own change frame. When ``labeling`` is given the change
    support and change frames must be constant on every superpixel.
    """

    background: np.ndarray
    change: np.ndarray
    change_frame: int | np.ndarray
    sigma2: float
    frames: int
    labeling: Labeling | None = None

    def __post_init__(self):
        Q = np.asarray(self.background, dtype=np.float64)
        D = np.asarray(self.change, dtype=np.float64)
        if Q.ndim != 3 or Q.shape != D.shape:
            raise DimensionError(f"background {Q.shape} and change {D.shape} must share shape (L, H, W)")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(D))):
            raise ConfigError("background and change must be finite")
        if not self.sigma2 >= 0:
            raise ConfigError(f"sigma2 must be >= 0, got {self.sigma2}")
        if int(self.frames) != self.frames or self.frames < 2:
            raise ConfigError(f"frames must be an integer >= 2, got {self.frames}")
        tc = np.broadcast_to(np.asarray(self.change_frame), Q.shape[1:])
        if not np.issubdtype(tc.dtype, np.integer) or tc.min() < 2:
            raise ConfigError("change_frame must be an integer >= 2")
        object.__setattr__(self, "background", Q)
        object.__setattr__(self, "change", D)
        if self.labeling is not None:
            if self.labeling.shape != Q.shape[1:]:
                raise DimensionError("labeling does not match the scene grid")
            lab = self.labeling.flat
            changed = self.support.reshape(-1)
            tcf = tc.reshape(-1)
            K = self.labeling.n_segments
            hits = np.bincount(lab, changed, K)
            if np.any((hits > 0) & (hits < self.labeling.sizes())):
                raise ConfigError("change support is not aligned with superpixels (each segment must "
                                  "change entirely or not at all)")
            lo = np.full(K, np.iinfo(np.int64).max)
            hi = np.full(K, np.iinfo(np.int64).min)
            np.minimum.at(lo, lab, tcf)
            np.maximum.at(hi, lab, tcf)
            if np.any(lo != hi):
                raise ConfigError("change frames differ within a superpixel")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.background.shape

    @property
    def support(self) -> np.ndarray:
        """``(H, W)`` boolean map of pixels whose change column is nonzero."""
        return np.any(self.change != 0, axis=0)

    @property
    def change_frames(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.change_frame), self.shape[1:])

    @property
    def first_change(self) -> int | None:
        """Earliest change frame among changed pixels, ``None`` without a change."""
        s = self.support
        return int(self.change_frames[s].min()) if s.any() else None

    def truth(self) -> np.ndarray:
        """``(T, H, W)`` uint8 with ``c[t-1] = 1`` where ``t >= t_c`` on the support."""
        t = np.arange(1, self.frames + 1)[:, None, None]
        return ((t >= self.change_frames[None]) & self.support[None]).astype(np.uint8)


def noise_for_snr(background: np.ndarray, snr_db: float) -> float:
    """Noise variance giving ``10 log10(mean(Q**2) / sigma2) = snr_db``; ``inf`` gives 0."""
    if math.isnan(snr_db):
        raise ConfigError("snr_db must be a number")
    power = float(np.mean(np.asarray(background, dtype=np.float64) ** 2))
    # underflows to 0 rather than overflowing for very large snr_db
    return power * 10.0 ** (-snr_db / 10)


def simulate_sequence(cfg: SimulatorConfig, seed: int) -> tuple[ImageSequence, np.ndarray]:
    """Draw one noisy sequence; returns the sequence and its ``(T, H, W)`` truth."""
    rng = np.random.default_rng(seed)
    T = cfg.frames
    L, H, W = cfg.shape
    t = np.arange(1, T + 1)[:, None, None, None]
    active = (t >= cfg.change_frames[None, None]).astype(np.float64)
    data = cfg.background[None] + active * cfg.change[None]
    if cfg.sigma2 > 0:
        data = data + math.sqrt(cfg.sigma2) * rng.standard_normal((T, L, H, W))
    return ImageSequence(data.astype(np.float32)), cfg.truth()


@dataclass(frozen=True, eq=False)
class Scenario:
    """A simulator configuration with the detector and segmentation settings used on it."""

    sim: SimulatorConfig
    detector: DetectorConfig
    superpixels: SuperpixelParams
    metric: str = "delay"
    cva_tau: float | None = None

    def __post_init__(self):
        if self.metric not in ("delay", "pdpfa"):
            raise ConfigError(f"metric must be 'delay' or 'pdpfa', got {self.metric!r}")


def make_background(height: int, width: int, bands: int, step: int, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-constant scene: Voronoi regions of random sites with random spectra and faint texture."""
    n_regions = max(1, math.ceil(height / step) * math.ceil(width / step))
    sites = rng.uniform([0, 0], [height, width], size=(n_regions, 2))
    spectra = rng.uniform(0.2, 1.0, size=(n_regions, bands))
    rr, cc = np.mgrid[0:height, 0:width]
    d2 = (rr[..., None] - sites[:, 0]) ** 2 + (cc[..., None] - sites[:, 1]) ** 2
    region = np.argmin(d2, axis=-1)
    Q = spectra[region].transpose(2, 0, 1)
    return Q * (1.0 + 0.02 * rng.standard_normal(Q.shape))


def build_scenario(settings: Settings, background: np.ndarray | None = None,
                   labeling: Labeling | None = None, support: np.ndarray | None = None) -> Scenario:
    """Turn a settings record into a fixed scene; only the noise varies between runs.

    By default the background is synthesized from ``scene_seed``, segmented
    with SLIC, and ``changed_segments`` superpixels are picked at random. A
    caller-supplied ``background`` ``(L, H, W)``, ``labeling`` or boolean
    change ``support`` ``(H, W)`` replaces the corresponding step; a support
    that cuts through a superpixel is rejected.
    """
    (T, tc) = settings.require("frames", "change_frame")
    params = settings.superpixel_params()
    rng = np.random.default_rng(settings.scene_seed)
    if background is None:
        H, W, L = settings.require("height", "width", "bands")
        Q = make_background(H, W, L, params.step, rng)
    else:
        Q = np.asarray(background, dtype=np.float64)
        L, H, W = Q.shape
    if labeling is None:
        labeling = slic_segment(Q, params)
    elif labeling.shape != (H, W):
        raise DimensionError(f"labeling shape {labeling.shape} does not match scene ({H}, {W})")
    if settings.snr_db is not None:
        sigma2 = noise_for_snr(Q, settings.snr_db)
    else:
        (sigma2,) = settings.require("sigma2")
    lab = labeling.labels
    if support is None:
        k = min(settings.changed_segments, labeling.n_segments)
        chosen = np.sort(rng.choice(labeling.n_segments, size=k, replace=False)) if k > 0 else np.zeros(0, int)
        support = np.isin(lab, chosen)
    support = np.asarray(support, dtype=bool)
    if support.shape != (H, W):
        raise DimensionError(f"change support shape {support.shape} does not match scene ({H}, {W})")
    amp = settings.change_amplitude * math.sqrt(float(np.mean(Q ** 2)))
    change = np.zeros_like(Q)
    frames = np.full((H, W), tc, dtype=np.int64)
    for seg in np.unique(lab[support]):
        direction = rng.choice([-1.0, 1.0], size=L)
        where = (lab == seg) & support
        change[:, where] = (amp * direction)[:, None]
        if settings.change_spread > 0:
            frames[lab == seg] = tc + int(rng.integers(0, settings.change_spread))
    sim = SimulatorConfig(Q, change, frames if settings.change_spread > 0 else int(tc),
                          sigma2, T, labeling)
    detector_sigma2 = settings.sigma2 if settings.sigma2 is not None else sigma2
    if detector_sigma2 <= 0:
        raise ConfigError("the detector needs sigma2 > 0; set sigma2 or snr_db")
    lam, Lam = settings.require("slow_rate", "fast_rate")
    det = DetectorConfig(lam, Lam, settings.gamma, settings.alpha, detector_sigma2, settings.burn_in)
    return Scenario(sim, det, params, settings.metric, settings.cva_tau)


# ---------------------------------------------------------------- metrics


class Outcome(Enum):
    DETECTED = "detected"
    FALSE_ALARM = "false_alarm"
    UNDETECTED = "undetected"


class DelayResult(NamedTuple):
    outcome: Outcome
    delay: int | None = None
    detected_at: int | None = None


def detection_delay(flags, t_c: int, first_frame: int = 2) -> DelayResult:
    """Classify one run from its per-frame flags.

    Args:
        flags: ``(frames, N)`` flags (or per-frame booleans), row 0 being
            frame ``first_frame``.
        t_c: true change frame.
    """
    f = np.asarray(flags)
    any_flag = f.reshape(f.shape[0], -1).any(axis=1) if f.ndim > 1 else f.astype(bool)
    t = np.arange(first_frame, first_frame + any_flag.size)
    if np.any(any_flag & (t < t_c)):
        return DelayResult(Outcome.FALSE_ALARM)
    hit = np.flatnonzero(any_flag & (t >= t_c))
    if hit.size == 0:
        return DelayResult(Outcome.UNDETECTED)
    t_hat = int(t[hit[0]])
    return DelayResult(Outcome.DETECTED, t_hat - t_c, t_hat)


class PdPfaCounts(NamedTuple):
    hits: int
    positives: int
    false_alarms: int
    negatives: int

    def __add__(self, other):
        return PdPfaCounts(*(a + b for a, b in zip(self, other)))

    @property
    def pd(self) -> float:
        return self.hits / self.positives if self.positives else math.nan

    @property
    def pfa(self) -> float:
        return self.false_alarms / self.negatives if self.negatives else math.nan


def pd_pfa_counts(estimates, truth) -> PdPfaCounts:
    est = np.asarray(estimates).astype(bool)
    tru = np.asarray(truth).astype(bool)
    if est.shape != tru.shape:
        raise DimensionError(f"estimate shape {est.shape} does not match truth {tru.shape}")
    pos = int(tru.sum())
    return PdPfaCounts(int((est & tru).sum()), pos, int((est & ~tru).sum()), tru.size - pos)


def pd_pfa(estimates, truth) -> tuple[float, float]:
    """Detection and false-alarm probabilities pooled over every pixel and frame.

    Both arrays cover the same evaluated frames (frame 1 excluded). ``Pd`` is
    NaN when the truth has no changed cell.
    """
    c = pd_pfa_counts(estimates, truth)
    return c.pd, c.pfa


# ---------------------------------------------------------------- Monte Carlo


@dataclass
class MetricsRow:
    operating_point: float
    pfa: float
    pd_or_delay: float
    false_alarm_runs: int
    undetected_runs: int
    runs: int
    frame_alarm_rate: float = math.nan


@dataclass
class MetricsTable:
    method: str
    metric: str
    rows: list[MetricsRow] = field(default_factory=list)

    HEADER = ("operating_point", "pfa", "pd_or_delay", "false_alarm_runs", "undetected_runs", "runs")

    def to_rows(self):
        for r in self.rows:
            yield (repr(float(r.operating_point)), repr(float(r.pfa)), _fmt(r.pd_or_delay),
                   r.false_alarm_runs, r.undetected_runs, r.runs)

    def to_csv(self, path) -> None:
        write_csv(path, self.HEADER, self.to_rows())


def _fmt(v: float) -> str:
    return "NA" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


@dataclass(frozen=True, eq=False)
class RunTrace:
    """What one run needs for any operating point.

    ``stat`` is ``r`` (daGFSS) or the CVA magnitude, shape ``(T-1, N)``;
    ``sigma_R_sq`` is per vertex (daGFSS only).
    """

    stat: np.ndarray
    truth: np.ndarray
    sigma_R_sq: np.ndarray | None = None
    bands: int = 1

    def flags(self, method: str, point: float, burn_in: int = 0) -> np.ndarray:
        if method == "cva":
            return self.stat > point
        N = self.stat.shape[1]
        xi = self.sigma_R_sq * chi2_isf(self.bands, point / N)
        f = (self.stat > xi) & (self.sigma_R_sq > 0)
        t = np.arange(2, 2 + self.stat.shape[0])
        f[t <= burn_in] = False
        return f

    def scores(self, method: str, burn_in: int = 0) -> np.ndarray:
        """Per-frame maximum of the score a threshold is compared against."""
        if method == "cva":
            return self.stat.max(axis=1)
        ok = self.sigma_R_sq > 0
        z = np.zeros_like(self.stat)
        z[:, ok] = self.stat[:, ok] / self.sigma_R_sq[ok]
        s = z.max(axis=1)
        t = np.arange(2, 2 + s.size)
        s[t <= burn_in] = -np.inf
        return s


def simulate_run(scenario: Scenario, method: str, seed: int) -> RunTrace:
    """Simulate one sequence and compute the per-frame statistics of ``method``."""
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    seq, truth = simulate_sequence(scenario.sim, seed)
    truth_flat = truth[1:].reshape(truth.shape[0] - 1, -1)
    if method == "cva":
        return RunTrace(sequence_magnitudes(seq.data), truth_flat)
    labeling = slic_segment(seq.frame(1), scenario.superpixels)
    det = ChangeDetector(scenario.detector, labeling, seq.data.shape[1])
    stats = det.run(seq)
    r = np.stack([s.r for s in stats])
    return RunTrace(r, truth_flat, det.sigma_R_sq, seq.data.shape[1])


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("GRAPHCPD_THREADS", "1")))
    except ValueError:
        return 1


def simulate_runs(scenario: Scenario, method: str, runs: int, seed: int) -> list[RunTrace]:
    """Run ``runs`` independent realizations with seeds ``seed + i``."""
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    seeds = [seed + i for i in range(runs)]
    workers = _workers()
    if workers == 1:
        return [simulate_run(scenario, method, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: simulate_run(scenario, method, s), seeds))


def default_grid(method: str, scenario: Scenario) -> list[float]:
    """Default operating points: ``alpha`` values, or for CVA the thresholds
    that a noise-only change vector exceeds with probability ``alpha / N``."""
    alphas = [0.001, 0.01, 0.05, 0.1, 0.2, 0.5]
    if method == "dagfss":
        return alphas
    L, H, W = scenario.sim.shape
    sigma2 = scenario.detector.sigma2
    return [math.sqrt(2.0 * sigma2 * chi2_isf(L, a / (H * W))) for a in alphas]


def _check_grid(method: str, grid: Sequence[float]) -> list[float]:
    grid = [float(g) for g in grid]
    if not grid:
        raise ConfigError("operating-point grid is empty")
    for g in grid:
        if method == "dagfss" and not 0 < g < 1:
            raise ConfigError(f"alpha grid values must lie in (0, 1), got {g}")
        if method == "cva" and not g >= 0:
            raise ConfigError(f"tau grid values must be >= 0, got {g}")
    return grid


def frame_alarm_rate(flag_runs: Sequence[np.ndarray], truth_runs: Sequence[np.ndarray], burn_in: int) -> float:
    """Fraction of tested change-free frames in which any vertex is flagged."""
    alarms = tested = 0
    for f, c in zip(flag_runs, truth_runs):
        t = np.arange(2, 2 + f.shape[0])
        sel = (t > burn_in) & ~c.any(axis=1)
        tested += int(sel.sum())
        alarms += int(f[sel].any(axis=1).sum())
    return alarms / tested if tested else math.nan


def tabulate(traces: Sequence[RunTrace], method: str, grid: Sequence[float], metric: str,
             burn_in: int = 0, t_c: int | None = None) -> MetricsTable:
    """Aggregate run traces at each operating point, in grid order."""
    grid = _check_grid(method, grid)
    table = MetricsTable(method, metric)
    n = len(traces)
    for point in grid:
        flags = [tr.flags(method, point, burn_in if method == "dagfss" else 0) for tr in traces]
        far = frame_alarm_rate(flags, [tr.truth for tr in traces], burn_in)
        if metric == "delay":
            if t_c is None:
                raise ConfigError("the delay metric needs a single change frame")
            res = [detection_delay(f, t_c) for f in flags]
            fa = sum(r.outcome is Outcome.FALSE_ALARM for r in res)
            und = sum(r.outcome is Outcome.UNDETECTED for r in res)
            delays = [r.delay for r in res if r.outcome is Outcome.DETECTED]
            mean_delay = float(np.mean(delays)) if delays else math.nan
            row = MetricsRow(point, fa / n, mean_delay, fa, und, n, far)
        else:
            total = PdPfaCounts(0, 0, 0, 0)
            fa = und = 0
            for f, tr in zip(flags, traces):
                c = pd_pfa_counts(f, tr.truth)
                total = total + c
                fa += c.false_alarms > 0
                und += c.positives > 0 and c.hits == 0
            row = MetricsRow(point, total.pfa, total.pd, fa, und, n, far)
        log.info("%s %s=%g: pfa=%.4g value=%s frame_alarm_rate=%.4g", method,
                 "alpha" if method == "dagfss" else "tau", point, row.pfa, _fmt(row.pd_or_delay), far)
        table.rows.append(row)
    return table


def monte_carlo(scenario: Scenario, method: str, runs: int, grid: Sequence[float] | None = None,
                seed: int = 0) -> MetricsTable:
    """Simulate ``runs`` realizations and tabulate ``scenario.metric`` over the grid.

    The grid holds ``alpha`` values for ``dagfss`` and CVA thresholds for ``cva``.
    Deterministic given ``seed``.
    """
    grid = _check_grid(method, grid if grid is not None else default_grid(method, scenario))
    t_c = None
    if scenario.metric == "delay":
        tcs = np.unique(scenario.sim.change_frames)
        if tcs.size != 1:
            raise ConfigError("the delay metric needs a single change frame")
        t_c = int(tcs[0])
    traces = simulate_runs(scenario, method, runs, seed)
    return tabulate(traces, method, grid, scenario.metric, scenario.detector.burn_in, t_c)


class MatchedDelay(NamedTuple):
    target_pfa: float
    threshold: float
    pfa: float
    mean_delay: float
    false_alarm_runs: int
    undetected_runs: int
    runs: int


def delay_at_pfa(scores: np.ndarray, t_c: int, target_pfa: float) -> MatchedDelay:
    """Mean delay at the lowest threshold whose per-run false-alarm rate is at most ``target_pfa``.

    ``scores`` is ``(runs, T-1)``: per run and frame, the maximum score that a
    threshold is compared against (row 0 is frame 2). A run raises a false
    alarm when its pre-change maximum exceeds the threshold, so the candidate
    thresholds are exactly the sorted pre-change maxima.
    """
    s = np.asarray(scores, dtype=float)
    runs = s.shape[0]
    t = np.arange(2, 2 + s.shape[1])
    pre = s[:, t < t_c].max(axis=1) if np.any(t < t_c) else np.full(runs, -np.inf)
    allowed = int(math.floor(target_pfa * runs + 1e-9))
    ranked = np.sort(pre)[::-1]
    thr = ranked[allowed] if allowed < runs else -np.inf
    fa = pre > thr
    post = s[:, t >= t_c] > thr
    delays = []
    undetected = 0
    for i in range(runs):
        if fa[i]:
            continue
        hit = np.flatnonzero(post[i])
        if hit.size:
            delays.append(int(hit[0]))
        else:
            undetected += 1
    mean = float(np.mean(delays)) if delays else math.nan
    return MatchedDelay(target_pfa, float(thr), float(fa.mean()), mean, int(fa.sum()), undetected, runs)


def dagfss_alpha_for_threshold(threshold: float, bands: int, n_vertices: int) -> float:
    """Family-wise level whose Bonferroni threshold on ``r / sigma_R^2`` equals ``threshold``."""
    if not math.isfinite(threshold) or threshold <= 0:
        return 1.0
    return n_vertices * chi2_sf(threshold, bands)

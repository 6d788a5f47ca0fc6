"""SLIC superpixels for multiband frames.

The segmentation is a localized k-means in joint spectral/spatial space.
Spectral distance is Euclidean over all bands. The compactness is expressed
in units of the frame's mean absolute value, so the combined distance is
``d_spec + (m * mean|Y| / S) * d_xy`` and segmentations do not change when
the frame is rescaled. Centers start on a regular grid and are never
perturbed, so results are deterministic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .dataio import Frame, Labeling
from .errors import ConfigError

__all__ = ["SuperpixelParams", "Labeling", "slic_segment", "enforce_connectivity", "is_connected_partition"]


@dataclass(frozen=True)
class SuperpixelParams:
    step: int
    compactness: float = 10.0
    iterations: int = 10

    def __post_init__(self):
        if int(self.step) != self.step or self.step < 1:
            raise ConfigError(f"slic_step must be an integer >= 1, got {self.step}")
        if not self.compactness > 0:
            raise ConfigError(f"slic_compactness must be > 0, got {self.compactness}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError(f"slic_iters must be an integer >= 1, got {self.iterations}")


def _axis_centers(n: int, S: int) -> np.ndarray:
    # ceil(n / S) centers spaced S apart from S // 2; the last one is clamped
    # to the border when it would fall outside the image
    return np.minimum(S // 2 + S * np.arange(-(-n // S)), n - 1)


def _grid_centers(H: int, W: int, S: int) -> np.ndarray:
    rows = _axis_centers(H, S)
    cols = _axis_centers(W, S)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1).astype(float)


def slic_segment(frame: Frame | np.ndarray, params: SuperpixelParams) -> Labeling:
    """Segment one frame into compact, connected superpixels.

    Args:
        frame: a ``Frame`` or an ``(L, H, W)`` array.
        params: step ``S``, compactness and iteration count.

    Returns:
        A ``Labeling`` whose segments are 4-connected and numbered in
        row-major order of first appearance.
    """
    values = frame.values if isinstance(frame, Frame) else np.asarray(frame)
    L, H, W = values.shape
    S = int(params.step)
    if S > min(H, W):
        raise ConfigError(f"slic_step {S} exceeds min(H, W) = {min(H, W)}")

    X = values.reshape(L, -1).T.astype(np.float64)
    scale = float(np.mean(np.abs(X)))
    if scale > 0:
        X = X / scale
    rr, cc = np.divmod(np.arange(H * W), W)
    pos = np.stack([rr, cc], axis=1).astype(float)

    cpos = _grid_centers(H, W, S)
    cidx = (cpos[:, 0] * W + cpos[:, 1]).astype(int)
    cspec = X[cidx].copy()
    weight = params.compactness / S
    labels = np.zeros(H * W, dtype=np.int64)

    for _ in range(int(params.iterations)):
        dy = pos[:, None, 0] - cpos[None, :, 0]
        dx = pos[:, None, 1] - cpos[None, :, 1]
        d_xy = np.sqrt(dy * dy + dx * dx)
        d_spec = np.sqrt(((X[:, None, :] - cspec[None, :, :]) ** 2).sum(axis=2))
        dist = d_spec + weight * d_xy
        in_window = (np.abs(dy) <= S) & (np.abs(dx) <= S)
        # pixels outside every window fall back to the global minimum
        covered = in_window.any(axis=1)
        dist = np.where(in_window | ~covered[:, None], dist, np.inf)
        # argmin returns the first minimum: lowest center index wins ties
        labels = np.argmin(dist, axis=1)

        counts = np.bincount(labels, minlength=len(cpos))
        nonempty = counts > 0
        for j in range(2):
            cpos[nonempty, j] = np.bincount(labels, pos[:, j], len(cpos))[nonempty] / counts[nonempty]
        for b in range(L):
            cspec[nonempty, b] = np.bincount(labels, X[:, b], len(cpos))[nonempty] / counts[nonempty]

    return enforce_connectivity(labels.reshape(H, W), S)


def _components(raw: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """4-connected components of equal label, numbered in row-major scan order."""
    H, W = raw.shape
    comp = np.full((H, W), -1, dtype=np.int64)
    first = []
    for i in range(H):
        for j in range(W):
            if comp[i, j] >= 0:
                continue
            cid = len(first)
            first.append(i * W + j)
            lab = raw[i, j]
            comp[i, j] = cid
            queue = deque([(i, j)])
            while queue:
                y, x = queue.popleft()
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < H and 0 <= nx < W and comp[ny, nx] < 0 and raw[ny, nx] == lab:
                        comp[ny, nx] = cid
                        queue.append((ny, nx))
    return comp, first


def enforce_connectivity(raw, step: int) -> Labeling:
    """Split labels into 4-connected pieces and absorb small orphans.

    Components of at most ``step**2 / 4`` pixels are visited in row-major
    order of their first pixel and merged into the adjacent segment sharing
    the longest boundary (ties go to the segment whose first pixel comes
    first). Output ids are contiguous in row-major order of first appearance.
    """
    raw = np.asarray(raw)
    if raw.ndim == 1:
        raw = raw.reshape(1, -1)
    H, W = raw.shape
    comp, first = _components(raw)
    n = len(first)

    # boundary edge counts between components
    pairs = []
    if W > 1:
        pairs.append(np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], axis=1))
    if H > 1:
        pairs.append(np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], axis=1))
    boundary: list[dict[int, int]] = [dict() for _ in range(n)]
    if pairs:
        p = np.concatenate(pairs)
        p = p[p[:, 0] != p[:, 1]]
        for a, b in p.tolist():
            boundary[a][b] = boundary[a].get(b, 0) + 1
            boundary[b][a] = boundary[b].get(a, 0) + 1

    parent = list(range(n))
    size = np.bincount(comp.ravel(), minlength=n).tolist()
    members = [[c] for c in range(n)]

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    limit = step * step  # compare 4 * size against step**2 to stay in integers
    for c in range(n):
        g = find(c)
        if 4 * size[g] > limit:
            continue
        shared: dict[int, int] = {}
        for m in members[g]:
            for nb, cnt in boundary[m].items():
                h = find(nb)
                if h != g:
                    shared[h] = shared.get(h, 0) + cnt
        if not shared:
            continue
        target = min(shared, key=lambda h: (-shared[h], first[h]))
        # keep the representative with the earlier first pixel
        keep, drop = (g, target) if first[g] < first[target] else (target, g)
        parent[drop] = keep
        size[keep] += size[drop]
        members[keep].extend(members[drop])
        members[drop] = []

    roots = np.array([find(c) for c in range(n)])[comp]
    _, order = np.unique(roots.ravel(), return_index=True)
    relabel = {int(roots.ravel()[i]): k for k, i in enumerate(np.sort(order))}
    out = np.vectorize(relabel.__getitem__, otypes=[np.int64])(roots)
    return Labeling(out)


def is_connected_partition(labeling: Labeling) -> bool:
    """True when every segment is a single 4-connected component."""
    _, first = _components(labeling.labels)
    return len(first) == labeling.n_segments

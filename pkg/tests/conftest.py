import numpy as np
import pytest


def dense_normalized_laplacian(W):
    """Brute-force I - D^{-1/2} W D^{-1/2} with zero rows for isolated vertices."""
    W = np.asarray(W, dtype=float)
    d = W.sum(axis=1)
    N = len(d)
    L = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            if i == j:
                L[i, j] = 1.0 if d[i] > 0 else 0.0
            elif W[i, j]:
                L[i, j] = -W[i, j] / np.sqrt(d[i] * d[j])
    return L


def clique_adjacency(labels):
    lab = np.asarray(labels).reshape(-1)
    W = (lab[:, None] == lab[None, :]).astype(float)
    np.fill_diagonal(W, 0.0)
    return W


def dense_filter_matrix(W, gamma):
    """Filter matrix from a plain dense eigensolve: kernel passed except the
    degree-weighted constant, positive eigenvalues scaled by min(1, sqrt(gamma/mu))."""
    W = np.asarray(W, dtype=float)
    N = W.shape[0]
    vals, vecs = np.linalg.eigh(dense_normalized_laplacian(W))
    H = np.zeros((N, N))
    for mu, u in zip(vals, vecs.T):
        g = 1.0 if mu < 1e-9 else min(1.0, np.sqrt(gamma / mu))
        H += g * np.outer(u, u)
    v = np.sqrt(W.sum(axis=1))
    u1 = v / np.linalg.norm(v) if np.linalg.norm(v) > 0 else np.full(N, 1 / np.sqrt(N))
    return H - np.outer(u1, u1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

"""Independent reference implementations used as test oracles.

Each routine takes the slow, textbook route (dense matrices, recursion,
explicit loops) so that it shares no code path with the package.
"""

from __future__ import annotations

import math

import numpy as np


def dense_second_difference(n: int, h: float, bc: str) -> np.ndarray:
    """Dense 1D second-difference matrix.

    Neumann uses mirrored ghosts ``u[-1] = u[1]``; Dirichlet rows on the
    boundary are zero.
    """
    L = np.zeros((n, n))
    for i in range(n):
        if bc == "dirichlet" and i in (0, n - 1):
            continue
        L[i, i] = -2.0
        for j in (i - 1, i + 1):
            if j < 0:
                j = 1 if bc == "neumann" else None
            elif j >= n:
                j = n - 2 if bc == "neumann" else None
            if j is not None:
                L[i, j] += 1.0
    return L / (h * h)


def dense_first_difference(n: int, h: float, bc: str) -> np.ndarray:
    D = np.zeros((n, n))
    for i in range(n):
        for j, sign in ((i + 1, 1.0), (i - 1, -1.0)):
            if j < 0:
                j = 1 if bc == "neumann" else None
            elif j >= n:
                j = n - 2 if bc == "neumann" else None
            if j is not None:
                D[i, j] += sign
    return D / (2.0 * h)


def dense_laplacian_2d(nx: int, ny: int, hx: float, hy: float, bc: str) -> np.ndarray:
    """Kronecker-sum Laplacian for row-major ``(x, y)`` ordering."""
    Lx = dense_second_difference(nx, hx, "neumann" if bc == "neumann" else "interior")
    Ly = dense_second_difference(ny, hy, "neumann" if bc == "neumann" else "interior")
    L = np.kron(Lx, np.eye(ny)) + np.kron(np.eye(nx), Ly)
    if bc == "dirichlet":
        mask = np.zeros((nx, ny), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        L[mask.ravel()] = 0.0
    return L


def cox_de_boor(x: float, i: int, p: int, t, closed_right: bool) -> float:
    """Recursive scalar Cox-de Boor value of ``B_{i,p}(x)``."""
    if p == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        # close the last nondegenerate span at the right end point
        if closed_right and x == t[-1] and t[i] < t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    out = 0.0
    if t[i + p] != t[i]:
        out += (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(x, i, p - 1, t, closed_right)
    if t[i + p + 1] != t[i + 1]:
        out += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(x, i + 1, p - 1, t, closed_right)
    return out


def two_pass_moments(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean then centred covariance with explicit loops (``1/(N-1)``)."""
    n_z, n = X.shape
    m = np.array([sum(X[i, l] for l in range(n)) / n for i in range(n_z)])
    C = np.empty((n_z, n_z))
    for i in range(n_z):
        for j in range(i, n_z):
            s = 0.0
            for l in range(n):
                s += (X[i, l] - m[i]) * (X[j, l] - m[j])
            C[i, j] = C[j, i] = s / (n - 1)
    return m, C


def textbook_gain(P: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    return P @ H.T @ np.linalg.inv(H @ P @ H.T + R)


def selection_matrix(indices, n: int) -> np.ndarray:
    H = np.zeros((len(indices), n))
    H[np.arange(len(indices)), indices] = 1.0
    return H


def gaussian_nll_via_inverse(d, C, gamma) -> float:
    S = np.asarray(C) + gamma * np.eye(len(d))
    sign, logdet = np.linalg.slogdet(S)
    assert sign > 0
    return float(logdet + d @ np.linalg.inv(S) @ d)


def l2_double_loop(est, truth, times, cell_volume) -> float:
    """Standardised L2 error by explicit trapezoid sums."""
    n_t, n_x = est.shape
    w = [0.0] * n_t
    if n_t == 1:
        w = [1.0]
    else:
        for i in range(n_t - 1):
            dt = times[i + 1] - times[i]
            w[i] += dt / 2
            w[i + 1] += dt / 2
    tot = sum(w) * n_x * cell_volume
    mean = sum(w[i] * truth[i, j] * cell_volume for i in range(n_t) for j in range(n_x)) / tot
    num = sum(w[i] * (est[i, j] - truth[i, j]) ** 2 * cell_volume for i in range(n_t) for j in range(n_x))
    den = sum(w[i] * (truth[i, j] - mean) ** 2 * cell_volume for i in range(n_t) for j in range(n_x))
    return math.sqrt(num / den)


def kalman_filter(m0, P0, step_matrices, records, gamma):
    """Exact linear-Gaussian filter.

    ``step_matrices`` yields, for each analysis interval, the list of one-step
    propagators; ``records`` holds ``(indices, values)`` per time.
    """
    m, P = np.array(m0, float), np.array(P0, float)
    means, covs = [], []
    for Fs, (idx, y) in zip(step_matrices, records):
        for F in Fs:
            m = F @ m
            P = F @ P @ F.T
        H = selection_matrix(idx, len(m))
        K = textbook_gain(P, H, gamma * np.eye(len(idx)))
        m = m + K @ (y - H @ m)
        P = (np.eye(len(m)) - K @ H) @ P
        means.append(m.copy())
        covs.append(P.copy())
    return np.array(means), covs

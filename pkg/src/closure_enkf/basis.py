"""Spatial basis sets for the closure field.

Two families are provided: clamped cubic B-splines on a 1D interval, and
Gaussian radial basis functions whose centres come from k-means clustering
of the grid points. Either way the basis is stored as a dense evaluation
matrix ``B`` with ``B[i, k] = b_k(x_i)``; a closure field with coefficients
``eta`` and scales ``sigma`` is ``B @ (sigma * eta)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, DimensionError, SingularityError
from .grid import SpatialGrid, grid_points


class BasisKind(str, enum.Enum):
    BSPLINE = "bspline"
    RBF = "rbf"


class BandwidthRule(str, enum.Enum):
    """How the Gaussian RBF bandwidth ``h`` is derived from the centroids.

    ``PAPER_LITERAL``: ``h = d_max / N_x`` (``N_x`` total grid points).
    ``LOWE``: ``h = d_max / sqrt(2 M)``.
    ``FIXED``: a user supplied ``h``.
    """

    PAPER_LITERAL = "paper-literal"
    LOWE = "lowe"
    FIXED = "fixed"


@dataclass(frozen=True)
class ScaledCoefficients:
    eta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim > 1 or (sigma.ndim == 1 and sigma.shape != eta.shape[:1]):
            raise DimensionError(f"sigma of shape {sigma.shape} does not match {eta.shape[:1]} coefficients")
        sigma = np.broadcast_to(sigma, eta.shape[:1]).copy()
        if np.any(sigma < 0):
            raise ConfigurationError("scale parameters must be nonnegative")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Evaluated basis functions plus the metadata needed to re-evaluate them."""

    kind: BasisKind
    matrix: np.ndarray
    knots: np.ndarray | None = None
    centroids: np.ndarray | None = None
    bandwidth: float | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_bases(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_points(self) -> int:
        return self.matrix.shape[0]

    def evaluate(self, points) -> np.ndarray:
        """Evaluate every basis function at arbitrary points."""
        points = np.asarray(points, dtype=float)
        if self.kind is BasisKind.BSPLINE:
            return cubic_bspline_matrix(points.reshape(-1), self.knots)
        return gaussian_kernel_matrix(points.reshape(len(points), -1), self.centroids, self.bandwidth)

    def synthesize(self, eta, sigma) -> np.ndarray:
        """``B @ (sigma * eta)``; ``eta`` may carry a trailing ensemble axis."""
        eta = np.asarray(eta, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if eta.shape[0] != self.n_bases:
            raise DimensionError(f"expected {self.n_bases} coefficients, got {eta.shape[0]}")
        scaled = eta * (sigma.reshape((-1,) + (1,) * (eta.ndim - 1)) if sigma.ndim else sigma)
        return self.matrix @ scaled

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "n_bases": self.n_bases}
        if self.knots is not None:
            out["knots"] = [float(v) for v in self.knots]
        if self.centroids is not None:
            out["centroids"] = [[float(c) for c in row] for row in self.centroids]
            out["bandwidth"] = float(self.bandwidth)
        if self.seed is not None:
            out["seed"] = int(self.seed)
        out.update(self.meta)
        return out


# --- cubic B-splines -------------------------------------------------------

def clamped_knots(a: float, b: float, n_bases: int, degree: int = 3) -> np.ndarray:
    """Open knot vector: ``degree+1`` repeated end knots, equally spaced interior."""
    n_interior = n_bases - degree - 1
    if n_interior < 0:
        raise ConfigurationError(f"need at least {degree + 1} bases for degree {degree}")
    interior = np.linspace(a, b, n_interior + 2)[1:-1]
    return np.concatenate([np.full(degree + 1, a), interior, np.full(degree + 1, b)])


def cubic_bspline_matrix(x, knots, degree: int = 3) -> np.ndarray:
    """Cox-de Boor evaluation of all bases at ``x``, shape ``(len(x), n_bases)``.

    Spans are half open except the last non-degenerate one, which is closed so
    that the right end point belongs to the final basis function.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    t = np.asarray(knots, dtype=float)
    n_bases = len(t) - degree - 1
    # degree-0 indicators over the len(t)-1 knot spans
    n_spans = len(t) - 1
    N = np.zeros((len(x), n_spans))
    last = max(j for j in range(n_spans) if t[j] < t[j + 1])
    for j in range(n_spans):
        if t[j] < t[j + 1]:
            upper = x <= t[j + 1] if j == last else x < t[j + 1]
            N[:, j] = (x >= t[j]) & upper
    for p in range(1, degree + 1):
        nxt = np.zeros((len(x), n_spans - p))
        for j in range(n_spans - p):
            left_den = t[j + p] - t[j]
            right_den = t[j + p + 1] - t[j + 1]
            if left_den > 0:
                nxt[:, j] += (x - t[j]) / left_den * N[:, j]
            if right_den > 0:
                nxt[:, j] += (t[j + p + 1] - x) / right_den * N[:, j + 1]
        N = nxt
    assert N.shape[1] == n_bases
    return N


def bspline_basis(grid: SpatialGrid, num_bases: int) -> BasisSet:
    """Clamped cubic B-spline basis with equally spaced knots over a 1D grid."""
    if grid.dim != 1:
        raise ConfigurationError("cubic B-spline basis is only supported in 1D")
    if num_bases < 4:
        raise ConfigurationError("a cubic B-spline basis needs at least 4 functions")
    knots = clamped_knots(0.0, grid.extent[0], num_bases)
    x = grid_points(grid)[:, 0]
    return BasisSet(BasisKind.BSPLINE, cubic_bspline_matrix(x, knots), knots=knots)


# --- k-means and Gaussian RBFs ---------------------------------------------

def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    closest = _sq_dists(points, np.asarray(centers))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a centre
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(points[idx])
        closest = np.minimum(closest, _sq_dists(points, points[idx][None])[:, 0])
    return np.asarray(centers, dtype=float)


def kmeans(points, k: int, seed: int = 0, max_iters: int = 300, return_history: bool = False):
    """Lloyd's algorithm with seeded k-means++ initialisation.

    An empty cluster is re-seeded at the point farthest from its current
    centroid. Iteration stops at an assignment fixed point or after
    ``max_iters`` rounds.

    Returns
    -------
    centroids : ndarray, shape (k, dim)
    history : list of float
        Within-cluster sum of squares after each assignment step; only
        returned when ``return_history`` is true.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if not 1 <= k <= len(points):
        raise ConfigurationError(f"k={k} must be between 1 and the number of points ({len(points)})")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, k, rng)
    labels = None
    history = []
    for _ in range(max_iters):
        d2 = _sq_dists(points, centers)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(points)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = points[members].mean(axis=0)
            else:
                own = d2[np.arange(len(points)), labels]
                far = int(np.argmax(own))
                centers[j] = points[far]
                labels[far] = j
    if return_history:
        return centers, history
    return centers


def gaussian_kernel_matrix(points, centroids, bandwidth: float) -> np.ndarray:
    return np.exp(-_sq_dists(np.asarray(points, float), np.asarray(centroids, float)) / bandwidth**2)


def rbf_bandwidth(centroids, rule, n_points: int, bandwidth: float | None = None) -> float:
    rule = BandwidthRule(rule)
    if rule is BandwidthRule.FIXED:
        if bandwidth is None or bandwidth <= 0:
            raise ConfigurationError("fixed bandwidth rule needs a positive bandwidth")
        return float(bandwidth)
    c = np.asarray(centroids, dtype=float)
    d_max = float(np.sqrt(_sq_dists(c, c).max()))
    if d_max == 0.0:
        raise ConfigurationError("cannot derive a bandwidth from coincident centroids; use the fixed rule")
    if rule is BandwidthRule.PAPER_LITERAL:
        return d_max / n_points
    return d_max / np.sqrt(2.0 * len(c))


def gaussian_rbf_basis(
    grid: SpatialGrid,
    num_bases: int,
    seed: int = 0,
    bandwidth_rule=BandwidthRule.LOWE,
    bandwidth: float | None = None,
    max_iters: int = 300,
) -> BasisSet:
    """Gaussian kernels centred on k-means centroids of the grid points."""
    if num_bases < 1:
        raise ConfigurationError("need at least one RBF")
    pts = grid_points(grid)
    centroids = kmeans(pts, num_bases, seed=seed, max_iters=max_iters)
    h = rbf_bandwidth(centroids, bandwidth_rule, grid.n_points, bandwidth)
    return BasisSet(
        BasisKind.RBF,
        gaussian_kernel_matrix(pts, centroids, h),
        centroids=centroids,
        bandwidth=h,
        seed=seed,
        meta={"bandwidth_rule": BandwidthRule(bandwidth_rule).value},
    )


def build_basis(grid, kind, num_bases, seed=0, bandwidth_rule=BandwidthRule.LOWE, bandwidth=None) -> BasisSet:
    kind = BasisKind(kind)
    if kind is BasisKind.BSPLINE:
        return bspline_basis(grid, num_bases)
    return gaussian_rbf_basis(grid, num_bases, seed=seed, bandwidth_rule=bandwidth_rule, bandwidth=bandwidth)


# --- synthesis and projection ----------------------------------------------

def synthesize_field(basis: BasisSet, coeffs: ScaledCoefficients) -> np.ndarray:
    """Closure field ``sum_k sigma_k eta_k b_k`` on the grid."""
    if coeffs.eta.shape[0] != basis.n_bases:
        raise DimensionError(f"expected {basis.n_bases} coefficients, got {coeffs.eta.shape[0]}")
    return basis.synthesize(coeffs.eta, coeffs.sigma)


def project_field(basis: BasisSet, sigma, target, ridge: float = 0.0, rtol: float = 1e-12) -> np.ndarray:
    """Least-squares coefficients ``eta`` with ``B diag(sigma) eta ~= target``.

    Uses a column-pivoted QR factorisation; columns whose pivot falls below
    ``rtol`` times the largest one are reported in a :class:`SingularityError`.
    A positive ``ridge`` adds ``ridge * |eta|^2`` to the objective instead.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (basis.n_points,):
        raise DimensionError(f"target must have length {basis.n_points}")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (basis.n_bases,))
    A = basis.matrix * sigma
    if ridge > 0:
        lhs = A.T @ A + ridge * np.eye(basis.n_bases)
        return scipy.linalg.solve(lhs, A.T @ target, assume_a="pos")
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    bad = diag <= rtol * (diag[0] if diag.size else 0.0)
    if diag.size == 0 or diag[0] == 0.0 or bad.any():
        cols = sorted(int(c) for c in piv[bad]) if diag.size and diag[0] > 0 else list(range(basis.n_bases))
        raise SingularityError(f"basis matrix is rank deficient in columns {cols}", columns=cols)
    eta = np.empty(basis.n_bases)
    eta[piv] = scipy.linalg.solve_triangular(R, Q.T @ target)
    return eta

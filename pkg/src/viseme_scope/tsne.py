"""Barnes-Hut t-SNE with cosine input affinities.

Input affinities are Gaussian conditionals over the ``3 * perplexity``
nearest neighbours (cosine or Euclidean), symmetrized into a sparse joint
distribution. The map is optimized with gradient descent, momentum, per-point
gains and early exaggeration; the repulsive half of the gradient comes from a
quadtree (``theta = 0`` is exact). Several restarts are run and the one with
the lowest KL divergence is kept.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from viseme_scope.errors import (
    BandwidthSearchFailed,
    ConfigError,
    DegenerateCovariance,
    KTooLarge,
    NonFiniteIterate,
    ZeroVector,
)
from viseme_scope.quadtree import QuadTree

logger = logging.getLogger(__name__)

METRICS = ("cosine", "euclidean")
INITS = ("pca", "random")

P_FLOOR = 1e-12
INIT_STD = 1e-4
RESTART_JITTER = 1e-6
MIN_GAIN = 0.01
_CHUNK = 512


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    early_exaggeration: float = 15.0
    exaggeration_iters: int = 250
    n_iter: int = 5000
    learning_rate: float = 750.0
    theta: float = 0.5
    metric: str = "cosine"
    init: str = "pca"
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch_iter: int = 250
    restarts: int = 3
    seed: int = 0
    trust_k: int = 12
    min_trust: float | None = None
    kl_every: int = 50

    def validate(self, n_samples: int | None = None) -> None:
        """Raise ConfigError for invalid settings; ``n_samples`` adds the run-time check."""
        if self.perplexity < 2:
            raise ConfigError(f"perplexity must be >= 2, got {self.perplexity}")
        if n_samples is not None and not 3 * self.perplexity < n_samples:
            raise ConfigError(
                f"need 3 * perplexity < N, got perplexity {self.perplexity} with N={n_samples}"
            )
        if self.n_iter < self.exaggeration_iters:
            raise ConfigError("n_iter must be >= exaggeration_iters")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must be in [0, 1], got {self.theta}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}, got {self.init!r}")
        if self.restarts < 1 or self.kl_every < 1 or self.trust_k < 1:
            raise ConfigError("restarts, kl_every and trust_k must be >= 1")
        if self.min_trust is not None and not 0.0 <= self.min_trust <= 1.0:
            raise ConfigError("min_trust must be in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TsneConfig:
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class RestartOutcome:
    index: int
    seed: int
    status: str
    final_kl: float | None = None
    trustworthiness: float | None = None


@dataclass(frozen=True, eq=False)
class TsneResult:
    coords: np.ndarray
    final_kl: float
    trustworthiness: float
    trust_k: int
    restart_index: int
    kl_trace: list[tuple[int, float]]
    kl_after_exaggeration: float
    restarts: list[RestartOutcome] = field(default_factory=list)

    def quality_dict(self, config: TsneConfig) -> dict[str, Any]:
        return {
            "final_kl": self.final_kl,
            f"trustworthiness_k{self.trust_k}": self.trustworthiness,
            "restart_index": self.restart_index,
            "kl_after_exaggeration": self.kl_after_exaggeration,
            "restarts": [asdict(r) for r in self.restarts],
            "config": config.to_dict(),
        }


# =============================================================================
# Distances and input affinities
# =============================================================================


def cosine_distance(x: np.ndarray, y: np.ndarray) -> float:
    """1 - cos(x, y), in [0, 2].

    Raises:
        ZeroVector: either input has zero norm.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ZeroVector()
    return float(min(2.0, max(0.0, 1.0 - np.dot(x, y) / (nx * ny))))


def _check_metric_input(X: np.ndarray, metric: str) -> None:
    if metric == "cosine":
        zero = np.flatnonzero(np.linalg.norm(X, axis=1) == 0)
        if zero.size:
            raise ZeroVector(int(zero[0]))


def nearest_neighbors(X: np.ndarray, k: int, metric: str = "cosine") -> tuple[np.ndarray, np.ndarray]:
    """The k nearest neighbours of every row (self excluded), nearest first.

    Ties break by index so the result is deterministic.
    """
    _check_metric_input(X, metric)
    n = X.shape[0]
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        d = cdist(X[lo:hi], X, metric=metric)
        if metric == "cosine":
            np.clip(d, 0.0, 2.0, out=d)
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        indices[lo:hi] = order
        distances[lo:hi] = np.take_along_axis(d, order, axis=1)
    return indices, distances


def _binary_search_betas(
    sq_dist: np.ndarray, perplexity: float, tol: float, max_steps: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row precision beta = 1 / (2 sigma^2) matching the target entropy.

    All rows are searched together; converged rows stop moving.
    Returns the conditional rows and the final entropy error per row.
    """
    n = sq_dist.shape[0]
    # Shifting by the row minimum leaves the normalized rows unchanged.
    shifted = sq_dist - sq_dist.min(axis=1, keepdims=True)
    target = math.log2(perplexity)
    beta = np.ones(n)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)

    def evaluate(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = np.exp(-shifted * b[:, np.newaxis])
        p /= p.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0, p * np.log2(p), 0.0)
        return p, -plogp.sum(axis=1)

    for _ in range(max_steps):
        _, entropy = evaluate(beta)
        error = entropy - target
        active = np.abs(error) > tol
        if not active.any():
            break
        too_flat = active & (error > 0)
        too_sharp = active & (error < 0)
        lo = np.where(too_flat, beta, lo)
        hi = np.where(too_sharp, beta, hi)
        beta = np.where(
            too_flat,
            np.where(np.isinf(hi), beta * 2.0, (beta + hi) / 2.0),
            np.where(too_sharp, (beta + lo) / 2.0, beta),
        )
    p, entropy = evaluate(beta)
    return p, entropy - target


def conditional_affinities(
    X: np.ndarray,
    perplexity: float,
    metric: str = "cosine",
    *,
    tol: float = 1e-5,
    max_steps: int = 50,
    strict: bool = False,
) -> sparse.csr_matrix:
    """Row-conditional Gaussian affinities p_{j|i} over nearest neighbours.

    Uses k = min(N - 1, floor(3 * perplexity)) neighbours; with k = N - 1 the
    rows are exact. Rows whose entropy misses log2(perplexity) by more than
    ``tol`` after ``max_steps`` bisection steps keep their last iterate and
    are logged (or raised with ``strict``).

    Raises:
        ZeroVector: a zero row under the cosine metric.
        BandwidthSearchFailed: non-converged rows when ``strict``.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    k = min(n - 1, int(3 * perplexity))
    if n < 2 or perplexity > k:
        raise ConfigError(f"perplexity {perplexity} needs more than {n} points")
    indices, distances = nearest_neighbors(X, k, metric)
    rows, error = _binary_search_betas(distances**2, perplexity, tol, max_steps)
    failed = np.flatnonzero(np.abs(error) > tol).tolist()
    if failed:
        if strict:
            raise BandwidthSearchFailed(failed)
        logger.warning("%s", BandwidthSearchFailed(failed))
    return sparse.csr_matrix(
        (rows.ravel(), (np.repeat(np.arange(n), k), indices.ravel())), shape=(n, n)
    )


def symmetrize(conditional: sparse.spmatrix | np.ndarray) -> sparse.csr_matrix:
    """P_ij = (p_{j|i} + p_{i|j}) / 2N, stored entries floored at 1e-12, total mass 1."""
    p = sparse.csr_matrix(conditional, dtype=np.float64)
    n = p.shape[0]
    joint = ((p + p.T) / (2.0 * n)).tocsr()
    joint.eliminate_zeros()
    np.maximum(joint.data, P_FLOOR, out=joint.data)
    joint.data /= joint.data.sum()
    return joint


# =============================================================================
# Initialization
# =============================================================================


def pca_project(X: np.ndarray, n_components: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Unscaled projection onto the top principal components.

    Each component is signed so its largest-magnitude loading is positive.

    Returns:
        The (N, n_components) projection and the matching singular values.
    """
    X = np.asarray(X, dtype=np.float64)
    centered = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    vt = vt[:n_components]
    signs = np.sign(vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)])
    signs[signs == 0] = 1.0
    vt = vt * signs[:, np.newaxis]
    return centered @ vt.T, s[:n_components]


def pca_init(X: np.ndarray, seed: int = 0) -> np.ndarray:
    """PCA projection rescaled to column std 1e-4.

    A covariance with fewer than two usable directions falls back to a
    seeded Gaussian start with the same std.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ConfigError("PCA initialization needs at least 2 points")
    try:
        projection, singular = pca_project(X, 2)
        scale = max(1.0, float(np.abs(X).max()))
        if singular.size < 2 or singular[1] <= 1e-10 * scale * math.sqrt(X.shape[0]):
            raise DegenerateCovariance(f"singular values {singular.tolist()}")
        std = projection.std(axis=0)
        return projection / std * INIT_STD
    except DegenerateCovariance as exc:
        logger.warning("PCA init degenerate (%s); using random init", exc)
        return random_init(X.shape[0], seed)


def random_init(n_samples: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(0.0, INIT_STD, size=(n_samples, 2))


# =============================================================================
# Objective and gradient
# =============================================================================


@dataclass(frozen=True)
class _Joint:
    rows: np.ndarray
    cols: np.ndarray
    data: np.ndarray

    @classmethod
    def of(cls, joint: sparse.spmatrix | np.ndarray) -> _Joint:
        coo = sparse.coo_matrix(joint)
        keep = coo.row != coo.col
        return cls(coo.row[keep], coo.col[keep], coo.data[keep].astype(np.float64))


def _attraction(joint: _Joint, Y: np.ndarray) -> np.ndarray:
    diff = Y[joint.rows] - Y[joint.cols]
    weight = joint.data / (1.0 + np.einsum("ij,ij->i", diff, diff))
    n = Y.shape[0]
    return np.stack(
        [
            np.bincount(joint.rows, weights=weight * diff[:, 0], minlength=n),
            np.bincount(joint.rows, weights=weight * diff[:, 1], minlength=n),
        ],
        axis=1,
    )


def _bh_gradient(joint: _Joint, Y: np.ndarray, theta: float, exaggeration: float = 1.0) -> tuple[np.ndarray, float]:
    repulsion, z = QuadTree(Y).repulsion(Y, theta)
    return 4.0 * (exaggeration * _attraction(joint, Y) - repulsion / z), z


def bh_gradient(P: sparse.spmatrix | np.ndarray, Y: np.ndarray, theta: float = 0.5) -> np.ndarray:
    """Gradient of KL(P || Q) with the repulsion summed over a quadtree.

    Attraction is exact over the stored entries of P; ``theta = 0`` gives the
    exact gradient.
    """
    if not 0.0 <= theta <= 1.0:
        raise ConfigError(f"theta must be in [0, 1], got {theta}")
    grad, _ = _bh_gradient(_Joint.of(P), np.asarray(Y, dtype=np.float64), theta)
    return grad


def exact_gradient(P: sparse.spmatrix | np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Direct O(N^2) gradient, the reference for ``bh_gradient``."""
    P = P.toarray() if sparse.issparse(P) else np.asarray(P, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    diff = Y[:, np.newaxis, :] - Y[np.newaxis, :, :]
    q = 1.0 / (1.0 + np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(q, 0.0)
    weight = (P - q / q.sum()) * q
    np.fill_diagonal(weight, 0.0)
    return 4.0 * np.einsum("ij,ijk->ik", weight, diff)


def _normalization(Y: np.ndarray) -> float:
    """Exact Z = sum_{i != j} 1 / (1 + |y_i - y_j|^2)."""
    n = Y.shape[0]
    total = 0.0
    for lo in range(0, n, _CHUNK):
        d = cdist(Y[lo : lo + _CHUNK], Y, metric="sqeuclidean")
        total += float((1.0 / (1.0 + d)).sum())
    return total - n


def _kl(joint: _Joint, Y: np.ndarray, z: float) -> float:
    mask = joint.data > 0
    p = joint.data[mask]
    diff = Y[joint.rows[mask]] - Y[joint.cols[mask]]
    q = 1.0 / (1.0 + np.einsum("ij,ij->i", diff, diff)) / z
    return max(0.0, float(np.sum(p * np.log(p / q))))


def kl_divergence(P: sparse.spmatrix | np.ndarray, Y: np.ndarray) -> float:
    """KL(P || Q) with Q the normalized Student-t kernel of Y (exact Z)."""
    Y = np.asarray(Y, dtype=np.float64)
    return _kl(_Joint.of(P), Y, _normalization(Y))


# =============================================================================
# Quality
# =============================================================================


def trustworthiness(X_high: np.ndarray, Y_low: np.ndarray, k: int = 12, metric: str = "euclidean") -> float:
    """Trustworthiness T(k) in [0, 1].

    Penalizes points that are among the k nearest neighbours in ``Y_low`` but
    not in ``X_high`` by how far down the high-dimensional ranking they sit.
    High-dimensional distances use ``metric``; low-dimensional ones are
    Euclidean. Ties break by index.

    Raises:
        KTooLarge: unless 1 <= k < N / 2.
    """
    X_high = np.asarray(X_high, dtype=np.float64)
    Y_low = np.asarray(Y_low, dtype=np.float64)
    n = X_high.shape[0]
    if not (1 <= k and 2 * k < n):
        raise KTooLarge(k, n)
    _check_metric_input(X_high, metric)
    ranks_1based = np.arange(1, n + 1)
    penalty = 0
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        rows = np.arange(hi - lo)
        dh = cdist(X_high[lo:hi], X_high, metric=metric)
        dh[rows, np.arange(lo, hi)] = np.inf
        order = np.argsort(dh, axis=1, kind="stable")
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.broadcast_to(ranks_1based, order.shape), axis=1)

        dl = cdist(Y_low[lo:hi], Y_low, metric="euclidean")
        dl[rows, np.arange(lo, hi)] = np.inf
        low_nn = np.argsort(dl, axis=1, kind="stable")[:, :k]
        r = np.take_along_axis(ranks, low_nn, axis=1)
        penalty += int(np.clip(r - k, 0, None).sum())
    t = 1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty
    return float(min(1.0, max(0.0, t)))


# =============================================================================
# Optimization
# =============================================================================


@dataclass(frozen=True, eq=False)
class _Run:
    coords: np.ndarray
    final_kl: float
    kl_after_exaggeration: float
    kl_trace: list[tuple[int, float]]


def _optimize(P: sparse.csr_matrix, joint: _Joint, Y0: np.ndarray, cfg: TsneConfig) -> _Run:
    Y = Y0.copy()
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace: list[tuple[int, float]] = []
    kl_after_exaggeration = kl_divergence(P, Y) if cfg.exaggeration_iters == 0 else math.nan

    for it in range(cfg.n_iter):
        exaggeration = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        momentum = cfg.momentum_early if it < cfg.momentum_switch_iter else cfg.momentum_late
        grad, z = _bh_gradient(joint, Y, cfg.theta, exaggeration)
        if it % cfg.kl_every == 0:
            trace.append((it, _kl(joint, Y, z)))

        same_direction = update * grad < 0.0
        gains = np.where(same_direction, gains + 0.2, gains * 0.8)
        np.maximum(gains, MIN_GAIN, out=gains)
        update = momentum * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
        if not np.isfinite(Y).all():
            raise NonFiniteIterate(it)

        if it + 1 == cfg.exaggeration_iters:
            kl_after_exaggeration = kl_divergence(P, Y)

    final_kl = kl_divergence(P, Y)
    trace.append((cfg.n_iter, final_kl))
    return _Run(Y, final_kl, kl_after_exaggeration, trace)


def run_tsne(X: np.ndarray, labels: Sequence[str] | None, cfg: TsneConfig) -> TsneResult:
    """Embed X in 2-D; run ``cfg.restarts`` restarts and keep the lowest KL.

    Restart r is seeded with ``cfg.seed + r``. Under PCA init restart 0 starts
    at the projection itself and later restarts add 1e-6 Gaussian jitter.
    With ``cfg.min_trust`` set, restarts below that trustworthiness are only
    chosen when none reaches it.

    Raises:
        ConfigError: invalid config, or N <= 3 * perplexity.
        NonFiniteIterate: every restart diverged.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    cfg.validate(n_samples=n)
    if labels is not None and len(labels) != n:
        raise ConfigError(f"{len(labels)} labels for {n} points")

    P = symmetrize(conditional_affinities(X, cfg.perplexity, cfg.metric))
    joint = _Joint.of(P)
    base = pca_init(X, cfg.seed) if cfg.init == "pca" else None

    outcomes: list[RestartOutcome] = []
    runs: dict[int, tuple[_Run, float]] = {}
    last_error: NonFiniteIterate | None = None
    for r in range(cfg.restarts):
        seed = cfg.seed + r
        rng = np.random.default_rng(seed)
        if base is None:
            Y0 = rng.normal(0.0, INIT_STD, size=(n, 2))
        elif r == 0:
            Y0 = base
        else:
            Y0 = base + rng.normal(0.0, RESTART_JITTER, size=base.shape)
        try:
            run = _optimize(P, joint, Y0, cfg)
        except NonFiniteIterate as exc:
            logger.warning("restart %d aborted: %s", r, exc)
            outcomes.append(RestartOutcome(r, seed, "non-finite"))
            last_error = exc
            continue
        trust = trustworthiness(X, run.coords, cfg.trust_k, cfg.metric)
        logger.info("restart %d: KL %.4f, trustworthiness %.4f", r, run.final_kl, trust)
        outcomes.append(RestartOutcome(r, seed, "ok", run.final_kl, trust))
        runs[r] = (run, trust)

    if not runs:
        assert last_error is not None
        raise last_error
    candidates = list(runs)
    if cfg.min_trust is not None:
        trusted = [r for r in candidates if runs[r][1] >= cfg.min_trust]
        if trusted:
            candidates = trusted
        else:
            logger.warning("no restart reached trustworthiness %.3f", cfg.min_trust)
    best = min(candidates, key=lambda r: (runs[r][0].final_kl, r))
    run, trust = runs[best]
    return TsneResult(
        coords=run.coords,
        final_kl=run.final_kl,
        trustworthiness=trust,
        trust_k=cfg.trust_k,
        restart_index=best,
        kl_trace=run.kl_trace,
        kl_after_exaggeration=run.kl_after_exaggeration,
        restarts=outcomes,
    )

"""Exact t-SNE embedding of per-model benchmark score profiles.

The classic recipe, without tree approximations: per-point Gaussian
bandwidths matched to a target perplexity by bisection, symmetrized
affinities, Student-t (1 df) low-dimensional kernel, early exaggeration and
momentum gradient descent.  At leaderboard scale (~1200 models) the O(n^2)
gradient is fast enough, and exactness keeps runs reproducible.

Row order does not matter when callers pass ``point_keys``: every point draws
its initial coordinates from an RNG stream keyed by (seed, stable key hash),
and both the affinity construction and the optimizer process points in
canonical key order internally, so permuting the input rows permutes the
output rows bit-exactly (ties between duplicate keys fall back to input
position and lose that guarantee).
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from ._backend import USE_NUMBA, njit
from .errors import DataError, NumericalError

__all__ = [
    "AffinityMatrix",
    "DegenerateDistances",
    "Embedding",
    "NumericalOverflow",
    "PerplexityTooLarge",
    "TsneParams",
    "compute_affinities",
    "embed",
    "kl_divergence",
    "score_features",
]

# contract is 1e-3 bits; bisect an order tighter so independently recomputed
# entropies stay inside the contract despite fp path differences
_ENTROPY_TOL_BITS = 1e-5
_BISECT_ITERS = 64
_BETA_CAP = 1e14  # precision cap == bandwidth floor; keeps duplicate rows finite
_Q_FLOOR = 1e-12
_KL_EVERY = 50


class PerplexityTooLarge(DataError):
    """Target perplexity exceeds what n points can support (max n-1)."""


class DegenerateDistances(DataError):
    """All pairwise distances are zero, so neighborhoods are undefined."""


class NumericalOverflow(NumericalError):
    """Gradient descent produced non-finite coordinates."""


@dataclass(frozen=True)
class TsneParams:
    """Gradient-descent hyperparameters (standard exact t-SNE defaults)."""

    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch: int = 250  # early momentum through this iteration


@dataclass(frozen=True)
class AffinityMatrix:
    """Symmetrized input affinities P with the fitted per-point bandwidths."""

    n: int
    p: np.ndarray
    target_perplexity: float
    bandwidths: np.ndarray


@dataclass(frozen=True)
class Embedding:
    """2-D coordinates plus the KL(P||Q) values recorded along the descent.

    ``kl_trace[k]`` is the divergence (against the unexaggerated P) after
    iteration ``kl_iterations[k]``; the trace always includes the end of the
    exaggeration phase and the final iteration.
    """

    coords: np.ndarray
    seed: int
    kl_trace: tuple
    kl_iterations: tuple
    hyperparams: tuple


def _stable_hash(key: str) -> int:
    """64-bit integer from sha256; stable across processes and platforms."""
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


def _canonical_order(n: int, point_keys) -> tuple:
    """(order, inverse, hashes): canonical arrangement sorted by key hash.

    With no keys the input order is canonical and streams are keyed by row
    index, so results then do depend on row order.
    """
    if point_keys is None:
        order = np.arange(n)
        return order, order.copy(), list(range(n))
    if len(point_keys) != n:
        raise DataError(
            f"point_keys has {len(point_keys)} entries for {n} rows")
    keys = [str(k) for k in point_keys]
    hashes = [_stable_hash(k) for k in keys]
    order = np.array(sorted(range(n), key=lambda i: (hashes[i], keys[i])),
                     dtype=int)
    inverse = np.empty(n, dtype=int)
    inverse[order] = np.arange(n)
    return order, inverse, hashes


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _bisect_row(span: np.ndarray, target_bits: float) -> float:
    """Precision beta matching the row entropy to target_bits within 1e-3.

    ``span`` holds squared distances shifted by the row minimum, so the
    nearest neighbor always has weight 1 and the row never underflows to
    all-zero.  Entropy is monotone decreasing in beta; unreachable targets
    (many exactly-tied neighbors) stop at the precision cap.
    """
    ln2 = math.log(2.0)
    beta, lo, hi = 1.0, 0.0, math.inf
    for _ in range(_BISECT_ITERS):
        w = np.exp(-beta * span)
        s = float(w.sum())
        h_bits = math.log2(s) + beta * float((w / s) @ span) / ln2
        if abs(h_bits - target_bits) <= _ENTROPY_TOL_BITS:
            break
        if h_bits > target_bits:
            lo = beta
            beta = beta * 2.0 if hi == math.inf else 0.5 * (beta + hi)
        else:
            hi = beta
            beta = 0.5 * (lo + beta)
        if beta >= _BETA_CAP:
            beta = _BETA_CAP
            if lo >= _BETA_CAP:
                break
    return beta


def compute_affinities(features, perplexity: float = 30.0,
                       point_keys=None) -> AffinityMatrix:
    """Symmetrized Gaussian affinities with perplexity-matched bandwidths.

    Each conditional distribution p(.|i) gets its own bandwidth, found by
    bisection so its perplexity matches the target within 1e-3 bits (at most
    64 halvings).  Conditionals are then symmetrized and normalized:
    p_ij = (p(j|i) + p(i|j)) / (2n).

    The usual guidance is n >= 3*perplexity; the hard limit enforced here is
    the information-theoretic one, perplexity <= n-1 (a conditional over n-1
    neighbors cannot exceed the uniform distribution's perplexity).

    ``point_keys`` (one stable identifier per row) makes the result exactly
    permutation-equivariant; see the module docstring.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] < 1:
        raise DataError("features must be a 2-D matrix with >= 1 column")
    if x.shape[0] < 2:
        raise DataError("need at least 2 points")
    if not np.all(np.isfinite(x)):
        raise DataError("features contain non-finite values")
    n = x.shape[0]
    perplexity = float(perplexity)
    if not perplexity > 1.0:
        raise DataError("perplexity must exceed 1")
    if perplexity > n - 1:
        raise PerplexityTooLarge(
            f"perplexity {perplexity:g} needs at least "
            f"{int(math.ceil(perplexity)) + 1} points, got {n}")

    order, inverse, _ = _canonical_order(n, point_keys)
    d2 = _pairwise_sq_dists(x[order])
    off_diag = ~np.eye(n, dtype=bool)
    if not np.any(d2[off_diag] > 0.0):
        raise DegenerateDistances("all pairwise distances are zero")

    target_bits = math.log2(perplexity)
    cond = np.zeros((n, n))
    sigmas = np.empty(n)
    for i in range(n):
        row = np.delete(d2[i], i)
        span = row - row.min()
        beta = _bisect_row(span, target_bits)
        w = np.exp(-beta * span)
        cond[i, np.arange(n) != i] = w / w.sum()
        sigmas[i] = math.sqrt(0.5 / beta)

    p = (cond + cond.T) / (2.0 * n)
    np.fill_diagonal(p, 0.0)
    return AffinityMatrix(n=n, p=p[np.ix_(inverse, inverse)],
                          target_perplexity=perplexity,
                          bandwidths=sigmas[inverse])


def _student_numerators(y: np.ndarray) -> tuple:
    """(num, z): Student-t kernel values 1/(1+d2) with zero diagonal, and their sum."""
    num = 1.0 / (1.0 + _pairwise_sq_dists(y))
    np.fill_diagonal(num, 0.0)
    return num, float(num.sum())


def kl_divergence(affinities: AffinityMatrix, coords) -> float:
    """KL(P || Q) of the affinities against Student-t similarities of coords."""
    y = np.asarray(coords, dtype=float)
    num, z = _student_numerators(y)
    q = np.maximum(num / z, _Q_FLOOR)
    p = affinities.p
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _descent_grad_numpy(y: np.ndarray, p_eff: np.ndarray) -> np.ndarray:
    num, z = _student_numerators(y)
    if not z > 0.0:  # all kernel values underflowed: poison the gradient
        z = math.nan
    w = (p_eff - num / z) * num
    # sum_j w_ij (y_i - y_j) = rowsum(w) y_i - (W y)_i
    return 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)


def _descent_grad_kernel(y, p_eff):  # pragma: no cover - jit-compiled
    n = y.shape[0]
    num = np.empty((n, n))
    z = 0.0
    for i in range(n):
        num[i, i] = 0.0
        for j in range(n):
            if j != i:
                dx = y[i, 0] - y[j, 0]
                dy = y[i, 1] - y[j, 1]
                v = 1.0 / (1.0 + dx * dx + dy * dy)
                num[i, j] = v
                z += v
    if not z > 0.0:
        z = np.nan
    grad = np.empty((n, 2))
    for i in range(n):
        gx = 0.0
        gy = 0.0
        for j in range(n):
            if j != i:
                w = (p_eff[i, j] - num[i, j] / z) * num[i, j]
                gx += w * (y[i, 0] - y[j, 0])
                gy += w * (y[i, 1] - y[j, 1])
        grad[i, 0] = 4.0 * gx
        grad[i, 1] = 4.0 * gy
    return grad


if USE_NUMBA:
    _descent_grad_jit = njit(cache=True)(_descent_grad_kernel)


def _descent_grad(y: np.ndarray, p_eff: np.ndarray) -> np.ndarray:
    if USE_NUMBA:
        return _descent_grad_jit(y, p_eff)
    return _descent_grad_numpy(y, p_eff)


def embed(affinities: AffinityMatrix, seed: int = 0,
          params: TsneParams | None = None, point_keys=None) -> Embedding:
    """Gradient descent on KL(P||Q) with a Student-t (1 df) kernel.

    Initial coordinates are N(0, 1e-4) draws, one RNG stream per point keyed
    by (seed, stable key hash).  The effective P is multiplied by
    ``early_exaggeration`` for the first ``exaggeration_iters`` iterations;
    momentum switches from 0.5 to 0.8 after iteration ``momentum_switch``.
    """
    params = params or TsneParams()
    n = affinities.n
    if n < 2:
        raise DataError("need at least 2 points to embed")
    if params.iterations < 1:
        raise DataError("iterations must be >= 1")

    order, inverse, hashes = _canonical_order(n, point_keys)
    p = np.ascontiguousarray(affinities.p[np.ix_(order, order)])
    seed_u = int(seed) % (1 << 63)

    y = np.empty((n, 2))
    for pos in range(n):
        rng = np.random.default_rng([seed_u, hashes[order[pos]]])
        y[pos] = rng.normal(0.0, 1e-2, size=2)

    p_ex = np.ascontiguousarray(p * params.early_exaggeration)
    record_at = set(range(_KL_EVERY, params.iterations + 1, _KL_EVERY))
    record_at.update((params.exaggeration_iters, params.iterations))
    record_at = {it for it in record_at if 1 <= it <= params.iterations}

    update = np.zeros_like(y)
    trace_iters = []
    trace_vals = []
    for it in range(1, params.iterations + 1):
        p_eff = p_ex if it <= params.exaggeration_iters else p
        grad = _descent_grad(y, p_eff)
        m = (params.momentum_early if it <= params.momentum_switch
             else params.momentum_late)
        update = m * update - params.learning_rate * grad
        y = y + update
        y = y - y.mean(axis=0)
        if not np.all(np.isfinite(y)):
            raise NumericalOverflow(f"non-finite coordinates at iteration {it}")
        if it in record_at:
            trace_iters.append(it)
            trace_vals.append(_kl_from_matrix(p, y))

    hyper = (affinities.target_perplexity, params.iterations,
             params.early_exaggeration, params.exaggeration_iters,
             params.learning_rate,
             (params.momentum_early, params.momentum_late,
              params.momentum_switch))
    return Embedding(coords=np.ascontiguousarray(y[inverse]), seed=int(seed),
                     kl_trace=tuple(trace_vals),
                     kl_iterations=tuple(trace_iters), hyperparams=hyper)


def _kl_from_matrix(p: np.ndarray, y: np.ndarray) -> float:
    num, z = _student_numerators(y)
    q = np.maximum(num / z, _Q_FLOOR)
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def score_features(table) -> tuple:
    """Z-scored benchmark score matrix over records with complete scores.

    Returns (features, kept, dropped) where kept/dropped are row indices into
    ``table.records``.  Records missing any benchmark score are excluded from
    the embedding and listed, not imputed.  Constant columns z-score to zero.
    """
    names = table.schema.benchmark_names
    cols = np.column_stack([np.asarray(table.column(b), dtype=float)
                            for b in names])
    complete = np.all(np.isfinite(cols), axis=1)
    kept = np.flatnonzero(complete)
    dropped = np.flatnonzero(~complete)
    if kept.size < 3:
        raise DataError(
            f"only {kept.size} records have complete scores; need >= 3")
    x = cols[kept]
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)
    return (x - mu) / sd, kept, dropped

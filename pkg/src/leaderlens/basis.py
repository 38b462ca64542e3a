"""Design-matrix blocks for additive fits.

Smooths are cubic regression splines on quantile knots: the spline is
parameterized by its values at the knots, second derivatives follow from
the natural-spline banded system, and the roughness penalty is the exact
integrated squared second derivative.  Outside the boundary knots the
basis extrapolates linearly.

A sum-to-zero constraint absorbs the constant mode of every smooth into
the intercept: the design block loses one column and the penalty is
projected accordingly, leaving the linear trend unpenalized
(null_space_dim 1).  Random-effect factors become plain indicator blocks
under an identity penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DegenerateFactor
from .errors import DataError


class TooFewDistinctValues(DataError):
    pass


@dataclass
class BasisBlock:
    """One term's design columns plus its quadratic penalty.

    ``penalty`` is None for unpenalized (parametric) blocks.  The knot
    matrices carried along allow evaluation at new x values.
    """

    term_id: str
    kind: str  # smooth | random-effect | parametric-factor
    variable: str
    columns: np.ndarray
    penalty: np.ndarray | None
    null_space_dim: int
    column_offset: int = 0
    by_level: str | None = None
    row_mask: np.ndarray | None = None  # rows this block applies to (by-smooths)
    # smooth internals
    knots: np.ndarray | None = None
    f_matrix: np.ndarray | None = None  # knot values -> second derivatives
    constraint: np.ndarray | None = None  # k x (k-1) null-space transform
    train_x: np.ndarray | None = None
    # categorical internals
    levels: tuple[str, ...] = ()

    @property
    def width(self) -> int:
        return self.columns.shape[1]


def _spline_matrices(knots: np.ndarray):
    """Banded natural-spline matrices: penalty S = D' B^-1 D and the map
    F from knot values to knot second derivatives."""
    k = knots.size
    h = np.diff(knots)
    d_mat = np.zeros((k - 2, k))
    b_mat = np.zeros((k - 2, k - 2))
    for i in range(k - 2):
        d_mat[i, i] = 1.0 / h[i]
        d_mat[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        d_mat[i, i + 2] = 1.0 / h[i + 1]
        b_mat[i, i] = (h[i] + h[i + 1]) / 3.0
        if i + 1 < k - 2:
            b_mat[i, i + 1] = h[i + 1] / 6.0
            b_mat[i + 1, i] = h[i + 1] / 6.0
    binv_d = np.linalg.solve(b_mat, d_mat)
    penalty = d_mat.T @ binv_d
    penalty = 0.5 * (penalty + penalty.T)
    f_matrix = np.vstack([np.zeros(k), binv_d, np.zeros(k)])
    return penalty, f_matrix


def _raw_spline_rows(x: np.ndarray, knots: np.ndarray,
                     f_matrix: np.ndarray) -> np.ndarray:
    """Rows of the k-column spline basis at x, linear beyond the knots."""
    k = knots.size
    h = np.diff(knots)
    x = np.asarray(x, dtype=float)
    rows = np.zeros((x.size, k))

    inside = (x >= knots[0]) & (x <= knots[-1])
    if inside.any():
        xi = x[inside]
        j = np.clip(np.searchsorted(knots, xi, side="right") - 1, 0, k - 2)
        hj = h[j]
        left = knots[j]
        right = knots[j + 1]
        am = (right - xi) / hj
        ap = (xi - left) / hj
        cm = ((right - xi) ** 3 / hj - hj * (right - xi)) / 6.0
        cp = ((xi - left) ** 3 / hj - hj * (xi - left)) / 6.0
        block = np.zeros((xi.size, k))
        idx = np.arange(xi.size)
        block[idx, j] += am
        block[idx, j + 1] += ap
        block += cm[:, None] * f_matrix[j]
        block += cp[:, None] * f_matrix[j + 1]
        rows[inside] = block

    below = x < knots[0]
    if below.any():
        # value and slope at the first knot
        base = np.zeros(k)
        base[0] = 1.0
        slope = np.zeros(k)
        slope[0] -= 1.0 / h[0]
        slope[1] += 1.0 / h[0]
        slope -= (h[0] / 3.0) * f_matrix[0]
        slope -= (h[0] / 6.0) * f_matrix[1]
        rows[below] = base + (x[below, None] - knots[0]) * slope

    above = x > knots[-1]
    if above.any():
        base = np.zeros(k)
        base[-1] = 1.0
        slope = np.zeros(k)
        slope[-2] -= 1.0 / h[-1]
        slope[-1] += 1.0 / h[-1]
        slope += (h[-1] / 6.0) * f_matrix[-2]
        slope += (h[-1] / 3.0) * f_matrix[-1]
        rows[above] = base + (x[above, None] - knots[-1]) * slope

    return rows


def _quantile_knots(x: np.ndarray, k: int,
                    weights: np.ndarray | None = None) -> np.ndarray:
    """Quantile knots of the weight-expanded sample.

    Linear interpolation at fractional index q*(N-1) of the sorted
    sample with each value repeated by its weight, so integer weights
    give exactly the knots of the replicated data.
    """
    if weights is None:
        weights = np.ones(x.size)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cw = np.cumsum(weights[order])
    pos = np.linspace(0.0, 1.0, k) * (cw[-1] - 1.0)
    lo = np.floor(pos)
    i_lo = np.searchsorted(cw, lo, side="right")
    i_hi = np.minimum(np.searchsorted(cw, lo + 1.0, side="right"), xs.size - 1)
    knots = xs[i_lo] + (pos - lo) * (xs[i_hi] - xs[i_lo])
    if np.unique(knots).size < k:
        # heavy ties: fall back to evenly spaced quantiles of the
        # distinct values (weights no longer matter there)
        uniq = np.unique(x)
        knots = np.quantile(uniq, np.linspace(0.0, 1.0, k))
    return knots


def build_smooth_basis(column: np.ndarray, k: int = 10, term_id: str = "s(x)",
                       variable: str = "x",
                       center_weights: np.ndarray | None = None) -> BasisBlock:
    """Centered cubic-regression-spline block on k quantile knots.

    The sum-to-zero constraint (weighted by ``center_weights`` when given)
    drops one column; the projected penalty keeps rank k-2, so exactly the
    linear trend stays unpenalized.
    """
    if k < 4:
        raise DataError(f"smooth basis needs k >= 4, got {k}")
    x = np.asarray(column, dtype=float)
    if np.isnan(x).any():
        raise DataError("smooth basis input contains missing values")
    if np.unique(x).size < k:
        raise TooFewDistinctValues(
            f"{variable!r} has {np.unique(x).size} distinct values; "
            f"need >= k = {k}")
    w = (np.ones(x.size) if center_weights is None
         else np.asarray(center_weights, dtype=float))
    knots = _quantile_knots(x, k, weights=w)
    penalty, f_matrix = _spline_matrices(knots)
    raw = _raw_spline_rows(x, knots, f_matrix)

    constraint_row = w @ raw  # 1 x k
    q, _ = np.linalg.qr(constraint_row[:, None], mode="complete")
    z = q[:, 1:]  # k x (k-1) null space of the constraint
    projected = z.T @ penalty @ z
    projected = 0.5 * (projected + projected.T)
    # Rotate to the penalty eigenbasis so the stored penalty is exactly
    # diagonal.  A pure reparameterization (fits and scores unchanged),
    # but it keeps the penalized normal equations well conditioned for
    # every lambda instead of degrading as lambda grows.
    eigvals, vecs = np.linalg.eigh(projected)
    z = z @ vecs
    return BasisBlock(
        term_id=term_id, kind="smooth", variable=variable,
        columns=raw @ z, penalty=np.diag(np.maximum(eigvals, 0.0)),
        null_space_dim=1,
        knots=knots, f_matrix=f_matrix, constraint=z, train_x=x.copy(),
    )


def eval_smooth_rows(block: BasisBlock, x: np.ndarray) -> np.ndarray:
    """Constrained basis rows at new x values (extrapolates linearly)."""
    raw = _raw_spline_rows(np.asarray(x, dtype=float), block.knots,
                           block.f_matrix)
    return raw @ block.constraint


def build_re_block(column: np.ndarray, term_id: str = "re(f)",
                   variable: str = "f") -> BasisBlock:
    """Indicator block per level under an identity (ridge) penalty."""
    values = np.asarray(column).astype(str)
    levels = tuple(sorted(set(values)))
    if len(levels) < 2:
        raise DegenerateFactor(
            f"random-effect factor {variable!r} has {len(levels)} level(s)")
    columns = np.zeros((values.size, len(levels)))
    for j, level in enumerate(levels):
        columns[values == level, j] = 1.0
    return BasisBlock(
        term_id=term_id, kind="random-effect", variable=variable,
        columns=columns, penalty=np.eye(len(levels)), null_space_dim=0,
        levels=levels,
    )


def build_factor_block(column: np.ndarray, term_id: str,
                       variable: str) -> BasisBlock:
    """Treatment-contrast columns: first sorted level is the reference."""
    values = np.asarray(column).astype(str)
    levels = tuple(sorted(set(values)))
    if len(levels) < 2:
        raise DegenerateFactor(
            f"parametric factor {variable!r} has {len(levels)} level(s)")
    columns = np.zeros((values.size, len(levels) - 1))
    for j, level in enumerate(levels[1:]):
        columns[values == level, j] = 1.0
    return BasisBlock(
        term_id=term_id, kind="parametric-factor", variable=variable,
        columns=columns, penalty=None, null_space_dim=len(levels) - 1,
        levels=levels,
    )

"""Gaussian additive mixed-model fits with REML smoothing selection.

The model is y = X beta + eps with a block design: intercept, optional
parametric factors, penalized spline smooths and ridge-penalized
random-effect indicators.  Fitting minimizes

    ||W^(1/2) (y - X beta)||^2 + sum_j lambda_j beta' S_j beta

and the smoothing parameters minimize the restricted likelihood score
with the error variance profiled out:

    V(lambda) = (n_eff - M_p) (log(2 pi sigma2_hat) + 1)
                + log|X'WX + S_lambda| - log|S_lambda|_+

where sigma2_hat = P / (n_eff - M_p), P is the penalized residual sum of
squares, M_p the total penalty null-space dimension, n_eff the sum of
weights (so integer weights behave exactly like row replication), and
|.|_+ the product of positive eigenvalues.  The optimizer is a cyclic
per-coordinate search on log lambda in [-8, 8]: coarse grid, then golden
section, repeated until the score stops improving by 1e-6.  Draws on the
standard penalized regression spline treatment (Wood 2017).

Confidence statements use the usual Bayesian posterior beta ~ N(beta_hat,
sigma2 (X'WX + S_lambda)^-1); intervals are +-1.96 standard errors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .basis import (
    BasisBlock,
    build_factor_block,
    build_re_block,
    build_smooth_basis,
    eval_smooth_rows,
)
from .data import AnalysisTable
from .errors import DataError, NumericalError
from .formula import Formula, TermSpec, parse_formula
from .special import f_sf


class NotEnoughData(DataError):
    pass


class RankDeficient(NumericalError):
    """Normal-equation matrix not positive definite after jitter escalation."""


class NumericalOverflow(NumericalError):
    pass


class TermNotFound(DataError):
    pass


class UnseenLevel(DataError):
    def __init__(self, level: str):
        super().__init__(f"factor level {level!r} was not seen in training data")
        self.level = level


_RHO_LO, _RHO_HI = -8.0, 8.0
_SCORE_TOL = 1e-6
_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)
_GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)


def _forward_sub(l_fac: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L x = b by substitution.

    Fixed operation order keeps the solution a smooth function of the
    matrix entries; LAPACK's pivoted solves jump by ~1 ulp when pivot
    ties flip, which is enough to poison finite-difference probes of the
    REML score.
    """
    x = np.array(b, dtype=float, copy=True)
    for i in range(l_fac.shape[0]):
        x[i] -= l_fac[i, :i] @ x[:i]
        x[i] /= l_fac[i, i]
    return x


def _backward_sub(l_fac: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L' x = b by substitution (L lower triangular)."""
    n = l_fac.shape[0]
    x = np.array(b, dtype=float, copy=True)
    for i in range(n - 1, -1, -1):
        x[i] -= l_fac[i + 1:, i] @ x[i + 1:]
        x[i] /= l_fac[i, i]
    return x


class _CholFactor:
    """Cholesky factor of a diagonally equilibrated matrix.

    A = D L L' D with D = diag(d).  Factoring the unit-diagonal matrix
    D^-1 A D^-1 instead of A itself keeps the factor entries O(1) even
    when the smoothing penalty pushes the diagonal apart by many orders
    of magnitude, which in turn keeps log|A| and the solves accurate
    enough for finite-difference probes of the score.
    """

    __slots__ = ("l_hat", "d")

    def __init__(self, l_hat: np.ndarray, d: np.ndarray):
        self.l_hat = l_hat
        self.d = d

    def solve(self, b: np.ndarray) -> np.ndarray:
        """A^-1 b for a vector or a stack of columns."""
        scaled = (b.T / self.d).T
        x = _backward_sub(self.l_hat, _forward_sub(self.l_hat, scaled))
        return (x.T / self.d).T

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.d.size))


def _chol_solve(a: np.ndarray, rhs: np.ndarray):
    """Equilibrated Cholesky factor + solve with escalating ridge jitter.

    Returns (solution, half log|A|, _CholFactor).  Raises RankDeficient
    when the matrix stays non-PD at the largest jitter.
    """
    diag = np.diag(a).copy()
    bad = ~(np.isfinite(diag) & (diag > 0.0))
    diag[bad] = 1.0
    d = np.sqrt(diag)
    a_hat = a / d[:, None] / d[None, :]
    for jitter in _JITTERS:
        try:
            l_hat = np.linalg.cholesky(a_hat + jitter * np.eye(a.shape[0]))
        except np.linalg.LinAlgError:
            continue
        half_logdet = float(np.sum(np.log(d)) + np.sum(np.log(np.diag(l_hat))))
        factor = _CholFactor(l_hat, d)
        return factor.solve(rhs), half_logdet, factor
    raise RankDeficient("normal equations not positive definite after jitter")


@dataclass
class PreparedGamm:
    """Immutable fit state: assembled design, sufficient statistics, and the
    per-term penalty embeddings the REML score needs."""

    formula: Formula
    blocks: tuple[BasisBlock, ...]
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    used_mask: np.ndarray
    dropped_records: tuple[int, ...]
    n_used: int
    n_eff: float
    m_p: int
    xtwx: np.ndarray
    xtwy: np.ndarray
    ytwy: float
    penalized: tuple[int, ...]  # indices into blocks
    pen_ranks: dict[str, int]
    pen_logdets: dict[str, float]
    pen_factors: dict[str, np.ndarray]  # R with S = R'R, positive part only

    @property
    def n_columns(self) -> int:
        return self.x.shape[1]

    def slice_of(self, block: BasisBlock) -> slice:
        return slice(block.column_offset, block.column_offset + block.width)

    def penalty_full(self, block: BasisBlock, lam: float) -> np.ndarray:
        s_full = np.zeros((self.n_columns, self.n_columns))
        sl = self.slice_of(block)
        s_full[sl, sl] = lam * block.penalty
        return s_full


def _require_numeric(table: AnalysisTable, name: str) -> np.ndarray:
    col = table.column(name)
    if col.dtype == object:
        raise DataError(f"variable {name!r} is categorical; a smooth needs "
                        "a numeric column")
    return np.asarray(col, dtype=float)


def _require_factor(table: AnalysisTable, name: str) -> np.ndarray:
    col = table.column(name)
    if col.dtype != object:
        raise DataError(f"variable {name!r} is numeric; expected a factor")
    return col.astype(str)


def prepare_gamm(formula: Formula | str, table: AnalysisTable,
                 weights: np.ndarray | None = None) -> PreparedGamm:
    """Assemble the design and sufficient statistics for a formula."""
    if isinstance(formula, str):
        formula = parse_formula(formula)
    y_all = _require_numeric(table, formula.response)
    w_all = np.asarray(table.weights if weights is None else weights, dtype=float)
    if w_all.shape[0] != len(table):
        raise DataError(f"weights length {w_all.shape[0]} != table size {len(table)}")
    if np.any(w_all <= 0.0):
        raise DataError("weights must be strictly positive")

    usable = np.isfinite(y_all)
    numeric_vars = []
    for term in formula.terms:
        if term.kind in ("smooth", "smooth-by"):
            numeric_vars.append(term.variable)
    for var in numeric_vars:
        usable &= np.isfinite(_require_numeric(table, var))

    used_idx = np.flatnonzero(usable)
    dropped = tuple(int(i) for i in np.flatnonzero(~usable))
    n_used = used_idx.size
    y = y_all[usable]
    w = w_all[usable]

    blocks: list[BasisBlock] = []
    offset = 1  # column 0 is the intercept
    intercept = BasisBlock(
        term_id="(Intercept)", kind="intercept", variable="",
        columns=np.ones((n_used, 1)), penalty=None, null_space_dim=1,
        column_offset=0)
    design_parts = [intercept.columns]

    for term in formula.terms:
        for block in _build_term_blocks(term, table, usable, w):
            block.column_offset = offset
            offset += block.width
            design_parts.append(block.columns)
            blocks.append(block)

    x = np.hstack(design_parts)
    p = x.shape[1]
    if n_used < p + 5:
        raise NotEnoughData(
            f"{n_used} usable records for {p} columns; need >= {p + 5}")

    xw = x * w[:, None]
    prepared = PreparedGamm(
        formula=formula,
        blocks=tuple([intercept] + blocks),
        x=x, y=y, w=w,
        used_mask=usable,
        dropped_records=dropped,
        n_used=n_used,
        n_eff=float(w.sum()),
        m_p=1 + sum(b.null_space_dim for b in blocks),
        xtwx=xw.T @ x,
        xtwy=xw.T @ y,
        ytwy=float(y @ (w * y)),
        penalized=tuple(i + 1 for i, b in enumerate(blocks)
                        if b.penalty is not None),
        pen_ranks={}, pen_logdets={}, pen_factors={},
    )
    for i in prepared.penalized:
        block = prepared.blocks[i]
        eigvals, vecs = np.linalg.eigh(block.penalty)
        keep = eigvals > 1e-10 * max(eigvals.max(), 1.0)
        positive = eigvals[keep]
        prepared.pen_ranks[block.term_id] = int(positive.size)
        prepared.pen_logdets[block.term_id] = float(np.sum(np.log(positive)))
        # Root factor: beta'S beta as ||R beta||^2 sums positive terms only,
        # where the raw quadratic form cancels by many orders of magnitude
        # once the fit is near the penalty null space.
        prepared.pen_factors[block.term_id] = (
            np.sqrt(positive)[:, None] * vecs[:, keep].T)
    return prepared


def _build_term_blocks(term: TermSpec, table: AnalysisTable,
                       usable: np.ndarray, w: np.ndarray) -> list[BasisBlock]:
    if term.kind == "smooth":
        x = _require_numeric(table, term.variable)[usable]
        block = build_smooth_basis(x, term.k, term_id=term.term_id,
                                   variable=term.variable, center_weights=w)
        return [block]
    if term.kind == "smooth-by":
        factor = _require_factor(table, term.by_factor)[usable]
        x = _require_numeric(table, term.variable)[usable]
        out = []
        for level in sorted(set(factor)):
            mask = factor == level
            x_level = x[mask]
            k_level = min(term.k, np.unique(x_level).size)
            sub = build_smooth_basis(
                x_level, max(k_level, 4),
                term_id=f"{term.term_id}:{level}",
                variable=term.variable, center_weights=w[mask])
            cols = np.zeros((usable.sum(), sub.width))
            cols[mask] = sub.columns
            sub.columns = cols
            sub.by_level = level
            sub.row_mask = mask
            out.append(sub)
        return out
    if term.kind == "random-effect":
        factor = _require_factor(table, term.variable)[usable]
        return [build_re_block(factor, term_id=term.term_id,
                               variable=term.variable)]
    factor = _require_factor(table, term.variable)[usable]
    return [build_factor_block(factor, term_id=term.term_id,
                               variable=term.variable)]


def _assemble_s_lambda(state: PreparedGamm, lam: dict[str, float]) -> np.ndarray:
    s_lambda = np.zeros((state.n_columns, state.n_columns))
    for i in state.penalized:
        block = state.blocks[i]
        sl = state.slice_of(block)
        s_lambda[sl, sl] += lam[block.term_id] * block.penalty
    return s_lambda


def _solve_at(state: PreparedGamm, lam: dict[str, float]):
    a = state.xtwx + _assemble_s_lambda(state, lam)
    beta, half_logdet, l_fac = _chol_solve(a, state.xtwy)
    # Evaluate the penalized objective directly at the computed beta: the
    # identity y'Wy - beta'X'Wy amplifies solver roundoff by cond(A), while
    # the objective itself is flat at its minimizer (error second order).
    resid = state.y - state.x @ beta
    pen_rss = float(resid @ (state.w * resid))
    for i in state.penalized:
        block = state.blocks[i]
        sl = state.slice_of(block)
        pen_rss += lam[block.term_id] * _root_quad(state, block, beta[sl])
    # Below ~1e-12 relative residual the fit is an exact interpolation and
    # pen_rss is pure roundoff that wobbles with lambda; freezing the
    # profiled variance there leaves the determinant terms to pick the
    # smoothest of the exact fits instead of chasing noise.
    floor = 1e-24 * max(state.ytwy, 1e-300)
    if pen_rss < floor:
        return beta, half_logdet, l_fac, floor, True
    return beta, half_logdet, l_fac, pen_rss, False


def _root_quad(state: PreparedGamm, block, coef: np.ndarray) -> float:
    """beta'S beta via the root factor: immune to the sign cancellation of
    the raw quadratic form near the penalty null space."""
    rb = state.pen_factors[block.term_id] @ coef
    return float(rb @ rb)


def reml_score(lam: dict[str, float] | np.ndarray, state: PreparedGamm) -> float:
    """-2 * restricted log-likelihood with sigma^2 profiled out."""
    lam = _as_lambda_dict(lam, state)
    if any(not v > 0.0 for v in lam.values()):
        raise DataError("all lambda values must be positive")
    _, half_logdet, _, pen_rss, _ = _solve_at(state, lam)
    df_resid = state.n_eff - state.m_p
    sigma2 = pen_rss / df_resid
    logdet_s = sum(
        state.pen_ranks[tid] * math.log(lam[tid]) + state.pen_logdets[tid]
        for tid in lam)
    score = (df_resid * (math.log(2.0 * math.pi * sigma2) + 1.0)
             + 2.0 * half_logdet - logdet_s)
    if not math.isfinite(score):
        raise NumericalOverflow(f"REML score not finite at lambda={lam}")
    return float(score)


def reml_gradient(lam: dict[str, float] | np.ndarray,
                  state: PreparedGamm) -> np.ndarray:
    """Analytic d(score)/d(log lambda_j), ordered like state.penalized."""
    lam = _as_lambda_dict(lam, state)
    beta, _, l_fac, pen_rss, floored = _solve_at(state, lam)
    df_resid = state.n_eff - state.m_p
    inv = l_fac.inverse()
    grad = []
    for i in state.penalized:
        block = state.blocks[i]
        sl = state.slice_of(block)
        lam_j = lam[block.term_id]
        trace = float(np.sum(inv[sl, sl] * block.penalty))
        # With the variance frozen at its interpolation floor the
        # log(sigma^2) term is constant, so its contribution vanishes.
        bsb = 0.0 if floored else _root_quad(state, block, beta[sl])
        grad.append(lam_j * (df_resid * bsb / pen_rss + trace)
                    - state.pen_ranks[block.term_id])
    return np.array(grad)


def _as_lambda_dict(lam, state: PreparedGamm) -> dict[str, float]:
    ids = [state.blocks[i].term_id for i in state.penalized]
    if isinstance(lam, dict):
        missing = [tid for tid in ids if tid not in lam]
        if missing:
            raise DataError(f"missing lambda for terms {missing}")
        return {tid: float(lam[tid]) for tid in ids}
    values = np.atleast_1d(np.asarray(lam, dtype=float))
    if values.size == 1 and len(ids) > 1:
        values = np.full(len(ids), float(values[0]))
    if values.size != len(ids):
        raise DataError(f"{values.size} lambda values for {len(ids)} terms")
    return dict(zip(ids, values))


def _golden_line(state: PreparedGamm, rho: np.ndarray, j: int) -> tuple[float, float]:
    """Minimize the score over rho[j] in [-8, 8]: coarse grid, then golden
    section inside the best cell."""
    ids = [state.blocks[i].term_id for i in state.penalized]

    def score_at(r: float) -> float:
        trial = rho.copy()
        trial[j] = r
        return reml_score(dict(zip(ids, np.exp(trial))), state)

    grid = np.linspace(_RHO_LO, _RHO_HI, 9)
    values = [score_at(g) for g in grid]
    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]

    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = score_at(c), score_at(d)
    while hi - lo > 1e-3:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = score_at(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = score_at(d)
    mid = 0.5 * (lo + hi)
    return mid, score_at(mid)


def optimize_lambda(state: PreparedGamm, max_cycles: int = 40) -> dict[str, float]:
    """Cyclic per-coordinate REML minimization on log lambda."""
    ids = [state.blocks[i].term_id for i in state.penalized]
    if not ids:
        return {}
    rho = np.zeros(len(ids))
    best = reml_score(dict(zip(ids, np.exp(rho))), state)
    for _ in range(max_cycles):
        previous = best
        for j in range(len(ids)):
            r_j, s_j = _golden_line(state, rho, j)
            if s_j < best:
                rho[j] = r_j
                best = s_j
        if previous - best < _SCORE_TOL:
            break
    rho = _gradient_polish(state, rho, ids)
    return dict(zip(ids, np.exp(rho)))


def _gradient_polish(state: PreparedGamm, rho: np.ndarray,
                     ids: list[str]) -> np.ndarray:
    """Damped Newton cleanup after the golden search.

    The line search stops at 1e-3 cells; pinning each coordinate to its
    stationary point makes the selected lambda (and hence coefficients)
    insensitive to sub-1e-12 perturbations of the score, e.g. from
    summation-order differences between weighted and replicated data.
    """
    rho = rho.copy()
    fd_h = 1e-3
    for _ in range(30):
        step_max = 0.0
        grad = reml_gradient(dict(zip(ids, np.exp(rho))), state)
        for j in range(len(ids)):
            at_lo = rho[j] <= _RHO_LO + 1e-9
            at_hi = rho[j] >= _RHO_HI - 1e-9
            if (at_lo and grad[j] > 0.0) or (at_hi and grad[j] < 0.0):
                continue  # boundary minimum
            up = rho.copy()
            up[j] += fd_h
            dn = rho.copy()
            dn[j] -= fd_h
            curv = (reml_gradient(dict(zip(ids, np.exp(up))), state)[j]
                    - reml_gradient(dict(zip(ids, np.exp(dn))), state)[j]
                    ) / (2.0 * fd_h)
            if not (curv > 1e-8):
                continue  # flat or concave slice: keep the search result
            step = float(np.clip(-grad[j] / curv, -0.5, 0.5))
            rho[j] = float(np.clip(rho[j] + step, _RHO_LO, _RHO_HI))
            step_max = max(step_max, abs(step))
        if step_max < 1e-10:
            break
    return rho


@dataclass
class GammFit:
    """A completed fit: coefficients, smoothing parameters, and the pieces
    needed for inference and prediction."""

    formula: Formula
    state: PreparedGamm
    coefficients: np.ndarray
    lam: dict[str, float]
    sigma2: float
    cov: np.ndarray  # posterior covariance of beta
    edf: dict[str, float]
    edf_total: float
    reml_score: float
    fitted: np.ndarray  # full table length; NaN where records were dropped
    n_used: int
    dropped_records: tuple[int, ...]

    @property
    def blocks(self) -> tuple[BasisBlock, ...]:
        return self.state.blocks

    def block(self, term_id: str) -> BasisBlock:
        for b in self.state.blocks:
            if b.term_id == term_id:
                return b
        raise TermNotFound(f"no term {term_id!r}; have "
                           f"{[b.term_id for b in self.state.blocks]}")

    def term_ids(self, penalized_only: bool = False) -> list[str]:
        if penalized_only:
            return [self.state.blocks[i].term_id for i in self.state.penalized]
        return [b.term_id for b in self.state.blocks]


def fit_gamm(formula: Formula | str, table: AnalysisTable,
             weights: np.ndarray | None = None,
             lambda_override: dict[str, float] | float | None = None) -> GammFit:
    """Fit the additive model; smoothing parameters from REML unless
    ``lambda_override`` pins them."""
    state = prepare_gamm(formula, table, weights)
    if lambda_override is None:
        lam = optimize_lambda(state)
    else:
        lam = _as_lambda_dict(lambda_override, state)
    score = reml_score(lam, state) if lam else _unpenalized_score(state)
    beta, _, l_fac, pen_rss, _ = _solve_at(state, lam)
    df_resid = state.n_eff - state.m_p
    sigma2 = pen_rss / df_resid
    inv = l_fac.inverse()
    infl = inv @ state.xtwx
    edf = {}
    for block in state.blocks:
        sl = state.slice_of(block)
        edf[block.term_id] = float(np.trace(infl[sl, sl]))
    fitted_used = state.x @ beta
    fitted = np.full(state.used_mask.shape[0], math.nan)
    fitted[state.used_mask] = fitted_used
    cov = sigma2 * inv
    return GammFit(
        formula=state.formula,
        state=state,
        coefficients=beta,
        lam=lam,
        sigma2=float(sigma2),
        cov=0.5 * (cov + cov.T),
        edf=edf,
        edf_total=float(np.trace(infl)),
        reml_score=float(score),
        fitted=fitted,
        n_used=state.n_used,
        dropped_records=state.dropped_records,
    )


def _unpenalized_score(state: PreparedGamm) -> float:
    _, half_logdet, _, pen_rss, _ = _solve_at(state, {})
    df_resid = state.n_eff - state.m_p
    sigma2 = pen_rss / df_resid
    return float(df_resid * (math.log(2.0 * math.pi * sigma2) + 1.0)
                 + 2.0 * half_logdet)


def smooth_significance(fit: GammFit, term_id: str) -> float:
    """Wald-type p-value for a penalized term.

    Statistic beta_j' (V_j)^+ beta_j with the pseudo-inverse truncated to
    rank r = max(1, round(edf_j)); referred to F(r, n_used - total EDF).
    This is an approximation, calibrated by Monte Carlo rather than any
    external implementation.
    """
    block = fit.block(term_id)
    if block.penalty is None:
        raise TermNotFound(f"term {term_id!r} is not a penalized term")
    sl = fit.state.slice_of(block)
    beta = fit.coefficients[sl]
    v = fit.cov[sl, sl]
    if np.allclose(beta, 0.0):
        return 1.0
    r = max(1, int(round(fit.edf[term_id])))
    eigvals, eigvecs = np.linalg.eigh(v)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    r = min(r, int(np.sum(eigvals > 1e-12 * max(eigvals[0], 1e-300))))
    if r < 1:
        return 1.0
    proj = eigvecs[:, :r].T @ beta
    stat = float(np.sum(proj**2 / eigvals[:r]))
    df2 = max(fit.n_used - fit.edf_total, 1.0)
    return float(min(max(f_sf(stat / r, float(r), df2), 0.0), 1.0))


_QUANTILE_FRACTIONS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class PartialEffect:
    term_id: str
    grid: np.ndarray
    estimate: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    quantile_marks: tuple[tuple[float, float], ...]


def partial_effect(fit: GammFit, term_id: str,
                   grid_size: int = 100) -> PartialEffect:
    """A smooth term's centered contribution curve with 95% bands."""
    block = fit.block(term_id)
    if block.kind != "smooth":
        raise TermNotFound(f"term {term_id!r} is not a smooth")
    grid = np.linspace(float(block.train_x.min()), float(block.train_x.max()),
                       grid_size)
    rows = eval_smooth_rows(block, grid)
    sl = fit.state.slice_of(block)
    estimate = rows @ fit.coefficients[sl]
    variance = np.einsum("ij,jk,ik->i", rows, fit.cov[sl, sl], rows)
    se = np.sqrt(np.maximum(variance, 0.0))
    marks = tuple((f, float(np.quantile(block.train_x, f)))
                  for f in _QUANTILE_FRACTIONS)
    return PartialEffect(
        term_id=term_id,
        grid=grid,
        estimate=estimate,
        ci_low=estimate - 1.96 * se,
        ci_high=estimate + 1.96 * se,
        quantile_marks=marks,
    )


def predict(fit: GammFit, table: AnalysisTable) -> np.ndarray:
    """Linear predictor on new records; factor levels must be known."""
    n = len(table)
    design = np.zeros((n, fit.state.n_columns))
    design[:, 0] = 1.0
    for block in fit.state.blocks[1:]:
        sl = fit.state.slice_of(block)
        if block.kind == "smooth":
            x = _require_numeric(table, block.variable)
            if block.by_level is None:
                design[:, sl] = eval_smooth_rows(block, x)
            else:
                by_name = _by_factor_name(fit.formula, block)
                factor = _require_factor(table, by_name)
                _check_levels(factor, _by_levels(fit, by_name))
                mask = factor == block.by_level
                if mask.any():
                    design[mask, sl] = eval_smooth_rows(block, x[mask])
        else:
            factor = _require_factor(table, block.variable)
            _check_levels(factor, set(block.levels))
            if block.kind == "random-effect":
                for j, level in enumerate(block.levels):
                    design[factor == level, sl.start + j] = 1.0
            else:
                for j, level in enumerate(block.levels[1:]):
                    design[factor == level, sl.start + j] = 1.0
    return design @ fit.coefficients


def _by_factor_name(formula: Formula, block: BasisBlock) -> str:
    for term in formula.terms:
        if term.kind == "smooth-by" and block.term_id.startswith(
                term.term_id + ":"):
            return term.by_factor
    raise TermNotFound(f"no smooth-by parent for {block.term_id!r}")


def _by_levels(fit: GammFit, by_name: str) -> set[str]:
    levels = set()
    for term in fit.formula.terms:
        if term.kind == "smooth-by" and term.by_factor == by_name:
            for block in fit.state.blocks:
                if block.by_level is not None and block.term_id.startswith(
                        term.term_id + ":"):
                    levels.add(block.by_level)
    return levels


def _check_levels(factor: np.ndarray, known: set[str]) -> None:
    seen = set(factor)
    unseen = seen - known
    if unseen:
        raise UnseenLevel(sorted(unseen)[0])


def fit_to_json(fit: GammFit, p_values: dict[str, float] | None = None) -> str:
    """Deterministic JSON serialization of a fit summary."""
    if p_values is None:
        p_values = {tid: smooth_significance(fit, tid)
                    for tid in fit.term_ids(penalized_only=True)}
    doc = {
        "formula": fit.formula.text or _formula_text(fit.formula),
        "lambda": {k: float(v) for k, v in sorted(fit.lam.items())},
        "sigma2": fit.sigma2,
        "edf": {k: float(v) for k, v in sorted(fit.edf.items())},
        "edf_total": fit.edf_total,
        "p_values": {k: float(v) for k, v in sorted(p_values.items())},
        "coefficients": [float(c) for c in fit.coefficients],
        "reml_score": fit.reml_score,
        "n_used": fit.n_used,
        "dropped_records": list(fit.dropped_records),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _formula_text(formula: Formula) -> str:
    return f"{formula.response} ~ " + " + ".join(
        t.term_id for t in formula.terms)

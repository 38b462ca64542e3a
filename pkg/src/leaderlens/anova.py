"""One-way ANOVA and Tukey HSD over grouped score columns.

The grouped tests follow the two-step recipe: split a benchmark's scores by
a categorical factor (training type, architecture family, parameter
bracket), run the one-way F test, and only when it is significant run the
all-pairs Tukey HSD.  Unequal group sizes use the Tukey-Kramer standard
error.  Records missing a benchmark score drop out per benchmark, never
per table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AnalysisTable
from .errors import DataError
from .special import (
    StudentizedRangeParams,
    _sr_cdf_batch,
    f_sf,
    studentized_range_quantile,
)


class DegenerateGroups(DataError):
    """A group has fewer than 2 values, or fewer than 2 groups supplied."""


class ZeroWithinVariance(DataError):
    """Every group is internally constant; the F statistic is undefined."""


class TooFewLevels(DataError):
    """The factor has fewer than 2 usable levels for a benchmark."""


@dataclass(frozen=True)
class AnovaResult:
    f_stat: float
    df_between: int
    df_within: int
    ss_between: float
    ss_within: float
    p: float
    group_sizes: dict[str, int]


@dataclass(frozen=True)
class TukeyComparison:
    level_a: str
    level_b: str
    mean_diff: float  # mean(level_a) - mean(level_b)
    se: float
    q_stat: float
    p_adj: float
    ci_low: float
    ci_high: float
    significant: bool


@dataclass(frozen=True)
class GroupedTestReport:
    factor: str
    benchmark: str
    anova: AnovaResult
    comparisons: tuple[TukeyComparison, ...]
    alpha: float
    dropped_levels: tuple[str, ...] = ()


def _clean_groups(groups: dict) -> dict[str, np.ndarray]:
    if len(groups) < 2:
        raise DegenerateGroups(f"need at least 2 groups, got {len(groups)}")
    out = {}
    for level in sorted(groups, key=str):
        values = np.asarray(groups[level], dtype=float)
        values = values[~np.isnan(values)]
        if values.size < 2:
            raise DegenerateGroups(
                f"group {level!r} has {values.size} value(s); need >= 2")
        out[str(level)] = values
    return out


def _decomposition(clean: dict[str, np.ndarray]):
    sizes = {lvl: int(v.size) for lvl, v in clean.items()}
    n_total = sum(sizes.values())
    k = len(clean)
    grand = sum(float(v.sum()) for v in clean.values()) / n_total
    ss_between = sum(v.size * (float(v.mean()) - grand) ** 2
                     for v in clean.values())
    ss_within = sum(float(((v - v.mean()) ** 2).sum()) for v in clean.values())
    return sizes, n_total, k, ss_between, ss_within


def one_way_anova(groups: dict) -> AnovaResult:
    """Classical between/within decomposition with an F tail p-value."""
    clean = _clean_groups(groups)
    sizes, n_total, k, ss_between, ss_within = _decomposition(clean)
    df_between = k - 1
    df_within = n_total - k
    if ss_within <= 0.0:
        raise ZeroWithinVariance(
            "all groups are internally constant; F statistic undefined")
    f_stat = (ss_between / df_between) / (ss_within / df_within)
    p = f_sf(f_stat, float(df_between), float(df_within))
    return AnovaResult(
        f_stat=float(f_stat),
        df_between=df_between,
        df_within=df_within,
        ss_between=float(ss_between),
        ss_within=float(ss_within),
        p=float(min(max(p, 0.0), 1.0)),
        group_sizes=sizes,
    )


def tukey_hsd(groups: dict, alpha: float = 0.05) -> list[TukeyComparison]:
    """All-pairs Tukey HSD with the Tukey-Kramer unequal-n standard error.

    For the pair (a, b): se = sqrt(MSE/2 * (1/n_a + 1/n_b)),
    q = |mean_a - mean_b| / se, p_adj from the studentized range with
    (k, N - k), and the CI half-width uses the 1 - alpha range quantile.
    """
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must be in (0, 1), got {alpha}")
    clean = _clean_groups(groups)
    sizes, n_total, k, _, ss_within = _decomposition(clean)
    df_within = n_total - k
    if ss_within <= 0.0:
        raise ZeroWithinVariance(
            "all groups are internally constant; Tukey HSD undefined")
    mse = ss_within / df_within
    params = StudentizedRangeParams(k, float(df_within))
    q_crit = studentized_range_quantile(1.0 - alpha, params)

    levels = list(clean)
    means = {lvl: float(v.mean()) for lvl, v in clean.items()}
    pairs = [(a, b) for i, a in enumerate(levels) for b in levels[i + 1:]]
    ses = np.array([np.sqrt(0.5 * mse * (1.0 / sizes[a] + 1.0 / sizes[b]))
                    for a, b in pairs])
    diffs = np.array([means[a] - means[b] for a, b in pairs])
    q_stats = np.abs(diffs) / ses
    p_adjs = 1.0 - _sr_cdf_batch(q_stats, params)

    out = []
    for (a, b), diff, se, q, p_adj in zip(pairs, diffs, ses, q_stats, p_adjs):
        p_adj = float(min(max(p_adj, 0.0), 1.0))
        hw = q_crit * se
        out.append(TukeyComparison(
            level_a=a, level_b=b,
            mean_diff=float(diff),
            se=float(se),
            q_stat=float(q),
            p_adj=p_adj,
            ci_low=float(diff - hw),
            ci_high=float(diff + hw),
            significant=bool(p_adj < alpha),
        ))
    return out


def run_grouped_tests(table: AnalysisTable, factor: str, alpha: float = 0.05,
                      force_pairwise: bool = False) -> list[GroupedTestReport]:
    """One report per schema benchmark, grouped by ``factor``.

    Levels contributing fewer than 2 usable scores to a benchmark are
    dropped from that benchmark's test and listed in its report.  Tukey runs
    only when the ANOVA is significant at ``alpha`` (or unconditionally with
    ``force_pairwise``).
    """
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must be in (0, 1), got {alpha}")
    col = table.column(factor)
    if col.dtype != object:
        raise DataError(f"factor {factor!r} is numeric, not categorical")
    col = col.astype(str)

    reports = []
    for bench in table.schema.benchmark_names:
        scores = table.column(bench)
        usable = ~np.isnan(scores)
        groups, dropped = {}, []
        for level in sorted(set(col)):
            values = scores[usable & (col == level)]
            if values.size >= 2:
                groups[level] = values
            else:
                dropped.append(level)
        if len(groups) < 2:
            raise TooFewLevels(
                f"factor {factor!r} has {len(groups)} usable level(s) for "
                f"benchmark {bench!r}")
        anova = one_way_anova(groups)
        if anova.p < alpha or force_pairwise:
            comparisons = tuple(tukey_hsd(groups, alpha))
        else:
            comparisons = ()
        reports.append(GroupedTestReport(
            factor=factor, benchmark=bench, anova=anova,
            comparisons=comparisons, alpha=alpha,
            dropped_levels=tuple(dropped)))
    return reports


def pair_frequencies(reports: list[GroupedTestReport]) -> dict[tuple[str, str], int]:
    """How often each level pair is significant across the reports.

    The cross-benchmark frequency table used to rank architecture pairs.
    """
    counts: dict[tuple[str, str], int] = {}
    for report in reports:
        for comp in report.comparisons:
            if comp.significant:
                key = (comp.level_a, comp.level_b)
                counts[key] = counts.get(key, 0) + 1
    return counts

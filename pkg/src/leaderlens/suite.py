"""Full analysis suite over one snapshot, and its serializable report.

Stage order is fixed: ingest -> derived columns -> correlations -> grouped
tests -> per-benchmark additive fits -> by-type fits -> interplay fits ->
2-D embedding.  Stages after ingest are isolated: a stage failure becomes a
warning in the bundle instead of aborting the run, and disabling one stage
cannot change another's numbers.

Weight modes only touch the additive-model battery (the grouped tests always
run unweighted): `arch-balance` reruns the fits with case weights that give
every architecture category equal total mass, `score-rescale` literally
multiplies the score columns by those factors before refitting.  Both store
the unweighted and reweighted variants side by side.
"""

import json
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from hashlib import sha256
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import backend_name
from .anova import GroupedTestReport, run_grouped_tests
from .data import (
    AnalysisTable,
    compute_balance_weights,
    parse_snapshot,
    transform_column,
)
from .errors import DataError, LeaderlensError, UsageError
from .gamm import GammFit, fit_gamm, fit_to_json, partial_effect
from .schema import get_schema, schema_from_file
from .tsne import Embedding, TsneParams, compute_affinities, embed, score_features

STAGES = ("corr", "grouped", "gamm", "by_type", "interplay", "tsne")
FACTORS = ("bracket", "type", "arch")
_FACTOR_COLUMNS = {"bracket": "param_bracket", "type": "type",
                   "arch": "arch_category"}
WEIGHT_MODES = ("none", "arch-balance", "score-rescale")


class InsufficientOverlap(DataError):
    def __init__(self, pair: tuple, n: int):
        self.pair = pair
        self.n = n
        super().__init__(
            f"columns {pair[0]!r} and {pair[1]!r} share only {n} "
            f"complete observations; need >= 3")


def parse_log_policy(text: str) -> tuple:
    """Map 'exclude' or 'offset=E' to a transform_column (policy, epsilon)."""
    if text == "exclude":
        return "log-exclude-nonpositive", 0.5
    if text.startswith("offset="):
        try:
            eps = float(text.split("=", 1)[1])
        except ValueError:
            raise UsageError(f"bad log_policy {text!r}") from None
        if not eps > 0.0:
            raise UsageError("log offset must be > 0")
        return "log-offset", eps
    raise UsageError(
        f"log_policy must be 'exclude' or 'offset=E', got {text!r}")


def derive_columns(table: AnalysisTable, log_policy: str = "exclude"
                   ) -> AnalysisTable:
    """Add log_params_b plus a log column per benchmark under the policy."""
    policy, eps = parse_log_policy(log_policy)
    table = transform_column(table, "params_b", "log-exclude-nonpositive")
    for bench in table.schema.benchmark_names:
        table = transform_column(table, bench, policy, eps)
    return table


def correlation_matrix(table: AnalysisTable, columns=None) -> np.ndarray:
    """Pairwise-complete Pearson correlations with an exact unit diagonal."""
    if columns is None:
        columns = table.schema.benchmark_names
    columns = list(columns)
    if len(columns) < 2:
        raise DataError("need at least 2 columns to correlate")
    data = [np.asarray(table.numeric_column(c), dtype=float) for c in columns]
    k = len(columns)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            both = np.isfinite(data[i]) & np.isfinite(data[j])
            if both.sum() < 3:
                raise InsufficientOverlap((columns[i], columns[j]),
                                          int(both.sum()))
            r = float(np.corrcoef(data[i][both], data[j][both])[0, 1])
            out[i, j] = out[j, i] = r
    return out


@dataclass(frozen=True)
class SuiteConfig:
    """Everything a suite run depends on; config + snapshot bytes + seed
    fully determine report.json."""

    input_path: str
    format: str = "csv"
    schema: str = "default"
    factors: tuple = FACTORS
    alpha: float = 0.05
    seed: int = 0
    weight_mode: str = "none"
    log_policy: str = "exclude"
    out_dir: str = "leaderlens-out"
    perplexity: float = 30.0
    tsne_iterations: int = 1000
    stages: tuple = STAGES

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise UsageError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.weight_mode not in WEIGHT_MODES:
            raise UsageError(f"weight_mode must be one of {WEIGHT_MODES}, "
                             f"got {self.weight_mode!r}")
        bad = [f for f in self.factors if f not in FACTORS]
        if bad:
            raise UsageError(f"unknown factors {bad}; choose from {FACTORS}")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise UsageError(f"unknown stages {bad}; choose from {STAGES}")
        self.log_transform()  # validates the policy string

    def log_transform(self) -> tuple:
        """(transform_column policy, epsilon) for this config."""
        return parse_log_policy(self.log_policy)

    def resolve_schema(self):
        if self.schema in ("default", "appendix-d"):
            return get_schema(self.schema)
        return schema_from_file(self.schema)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | None = None) -> "SuiteConfig":
        if not isinstance(doc, dict):
            raise UsageError("suite config must be a JSON object")
        aliases = {"input": "input_path", "out": "out_dir",
                   "weights": "weight_mode"}
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        kwargs = {}
        for key, value in doc.items():
            name = aliases.get(key, key)
            if name not in known:
                raise UsageError(f"unknown config key {key!r}")
            if name in ("factors", "stages"):
                value = tuple(value)
            kwargs[name] = value
        if "input_path" not in kwargs:
            raise UsageError("config needs 'input' (snapshot path)")
        if base_dir:
            for name in ("input_path", "out_dir"):
                if name in kwargs and not os.path.isabs(str(kwargs[name])):
                    kwargs[name] = str(Path(base_dir) / kwargs[name])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str) -> "SuiteConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, base_dir=str(Path(path).parent))

    def echo(self) -> dict:
        return {
            "input_path": self.input_path,
            "format": self.format,
            "schema": self.schema,
            "factors": list(self.factors),
            "alpha": self.alpha,
            "seed": self.seed,
            "weight_mode": self.weight_mode,
            "log_policy": self.log_policy,
            "perplexity": self.perplexity,
            "tsne_iterations": self.tsne_iterations,
            "stages": list(self.stages),
        }


@dataclass
class ReportBundle:
    """Everything the suite produced, in input order, render-ready."""

    metadata: dict
    grouped_tests: list = field(default_factory=list)
    correlations: np.ndarray | None = None
    correlation_columns: tuple = ()
    gamm_fits: dict = field(default_factory=dict)
    by_type_fits: dict = field(default_factory=dict)
    interplay_fits: dict = field(default_factory=dict)
    weighted_fits: dict = field(default_factory=dict)
    embedding: Embedding | None = None
    embedding_rows: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_doc(self) -> dict:
        doc = {
            "metadata": self.metadata,
            "warnings": list(self.warnings),
            "grouped_tests": [_grouped_doc(r) for r in self.grouped_tests],
            "correlations": None,
            "fits": {
                stage: {bench: _fit_doc(fit) for bench, fit in fits.items()}
                for stage, fits in (("gamm", self.gamm_fits),
                                    ("by_type", self.by_type_fits),
                                    ("interplay", self.interplay_fits))
            },
            "fits_weighted": {
                stage: {bench: _fit_doc(fit) for bench, fit in fits.items()}
                for stage, fits in self.weighted_fits.items()
            },
            "embedding": None,
        }
        if self.correlations is not None:
            doc["correlations"] = {
                "columns": list(self.correlation_columns),
                "matrix": self.correlations.tolist(),
            }
        if self.embedding is not None:
            emb = self.embedding
            doc["embedding"] = dict(
                self.embedding_rows,
                seed=emb.seed,
                hyperparams=list(emb.hyperparams[:-1]) + [list(emb.hyperparams[-1])],
                kl_iterations=list(emb.kl_iterations),
                kl_trace=list(emb.kl_trace),
            )
        return _jsonable(doc)

    def to_json_bytes(self) -> bytes:
        return doc_to_json_bytes(self.to_doc())


def doc_to_json_bytes(doc: dict) -> bytes:
    """Canonical byte serialization: sorted keys, compact separators."""
    return (json.dumps(doc, sort_keys=True, separators=(",", ":"),
                       allow_nan=False) + "\n").encode("utf-8")


def _jsonable(value):
    """Recursively convert numpy scalars/arrays; non-finite floats -> None."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, (np.integer, int)) and not isinstance(value, bool):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _grouped_doc(report: GroupedTestReport) -> dict:
    a = report.anova
    return {
        "factor": report.factor,
        "benchmark": report.benchmark,
        "alpha": report.alpha,
        "dropped_levels": list(report.dropped_levels),
        "anova": {
            "f_stat": a.f_stat, "df_between": a.df_between,
            "df_within": a.df_within, "ss_between": a.ss_between,
            "ss_within": a.ss_within, "p": a.p,
            "group_sizes": dict(sorted(a.group_sizes.items())),
        },
        "comparisons": [
            {"level_a": c.level_a, "level_b": c.level_b,
             "mean_diff": c.mean_diff, "se": c.se, "q_stat": c.q_stat,
             "p_adj": c.p_adj, "ci_low": c.ci_low, "ci_high": c.ci_high,
             "significant": c.significant}
            for c in report.comparisons
        ],
    }


def _fit_doc(fit: GammFit) -> dict:
    doc = json.loads(fit_to_json(fit))
    partials = {}
    for term_id in fit.term_ids():
        block = fit.block(term_id)
        if block.kind != "smooth":
            continue
        pe = partial_effect(fit, term_id)
        partials[term_id] = {
            "grid": pe.grid, "estimate": pe.estimate,
            "ci_low": pe.ci_low, "ci_high": pe.ci_high,
            "quantile_marks": [list(m) for m in pe.quantile_marks],
        }
    doc["partials"] = partials
    doc["n_dropped"] = len(fit.dropped_records)
    return doc


def _timestamp() -> str | None:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if not epoch:
        return None
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()


def _rescaled_scores_table(table: AnalysisTable,
                           config: SuiteConfig) -> AnalysisTable:
    """The literal reading of the balancing rerun: multiply score columns by
    each record's balance factor, then rebuild the log columns."""
    factors = compute_balance_weights(table, "arch_category").weights
    records = []
    for rec, w in zip(table.records, factors):
        scores = {b: (v if np.isnan(v) else float(v * w))
                  for b, v in rec.scores.items()}
        records.append(replace(rec, scores=scores))
    bare = AnalysisTable(records=tuple(records), schema=table.schema,
                         metadata=table.metadata)
    return derive_columns(bare, config.log_policy)


def _battery_formulas(table: AnalysisTable) -> dict:
    benches = table.schema.benchmark_names
    out = {"gamm": {}, "by_type": {}, "interplay": {}}
    for b in benches:
        out["gamm"][b] = f"log_{b} ~ s(log_params_b) + re(arch_category)"
        out["by_type"][b] = (f"log_{b} ~ s(log_params_b, by=type) + type"
                             " + re(arch_category)")
        others = [o for o in benches if o != b]
        smooths = " + ".join(f"s(log_{o})" for o in others)
        out["interplay"][b] = f"log_{b} ~ {smooths} + re(arch_category)"
    return out


def _run_battery(table: AnalysisTable, formulas: dict, stages: tuple,
                 weights=None) -> dict:
    out = {}
    for stage in ("gamm", "by_type", "interplay"):
        if stage not in stages:
            continue
        fits = {}
        for bench, formula in formulas[stage].items():
            fits[bench] = fit_gamm(formula, table, weights=weights)
        out[stage] = fits
    return out


def _embedding_rows(table: AnalysisTable, kept, dropped) -> dict:
    names = table.column("model")
    return {
        "models": [str(names[i]) for i in kept],
        "bracket": [str(v) for v in table.column("param_bracket")[kept]],
        "type": [str(v) for v in table.column("type")[kept]],
        "arch": [str(v) for v in table.column("arch_category")[kept]],
        "dropped_models": [str(names[i]) for i in dropped],
    }


def run_suite(config: SuiteConfig) -> ReportBundle:
    """Execute every requested stage; non-ingest failures become warnings."""
    try:
        raw = Path(config.input_path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read snapshot {config.input_path}: "
                        f"{exc}") from exc
    schema = config.resolve_schema()
    table = parse_snapshot(raw, config.format, schema)
    table = derive_columns(table, config.log_policy)

    metadata = {
        "tool": "leaderlens",
        "version": __version__,
        "backend": backend_name(),
        "snapshot_sha256": sha256(raw).hexdigest(),
        "timestamp": _timestamp(),
        "config": config.echo(),
        "ingest": table.metadata,
    }
    bundle = ReportBundle(metadata=metadata)

    def run_stage(name, func):
        if name not in config.stages:
            bundle.warnings.append(f"stage {name} skipped: not requested")
            return
        try:
            func()
        except LeaderlensError as exc:
            bundle.warnings.append(
                f"stage {name} failed: {type(exc).__name__}: {exc}")

    def corr_stage():
        bundle.correlations = correlation_matrix(table)
        bundle.correlation_columns = schema.benchmark_names

    def grouped_stage():
        for factor in config.factors:
            reports = run_grouped_tests(table, _FACTOR_COLUMNS[factor],
                                        alpha=config.alpha)
            for rep in reports:
                bundle.grouped_tests.append(replace(rep, factor=factor))

    run_stage("corr", corr_stage)
    run_stage("grouped", grouped_stage)

    formulas = _battery_formulas(table)
    gamm_stages = tuple(s for s in ("gamm", "by_type", "interplay")
                        if s in config.stages)
    for name in ("gamm", "by_type", "interplay"):
        def one_stage(stage=name):
            fits = _run_battery(table, formulas, (stage,))
            setattr(bundle, f"{stage}_fits", fits[stage])
        run_stage(name, one_stage)

    if config.weight_mode != "none" and gamm_stages:
        try:
            if config.weight_mode == "arch-balance":
                w = compute_balance_weights(table, "arch_category").weights
                bundle.weighted_fits = _run_battery(
                    table, formulas, gamm_stages, weights=w)
            else:  # score-rescale
                rescaled = _rescaled_scores_table(table, config)
                bundle.weighted_fits = _run_battery(
                    rescaled, _battery_formulas(rescaled), gamm_stages)
        except LeaderlensError as exc:
            bundle.warnings.append(
                f"stage weighted-refit failed: {type(exc).__name__}: {exc}")

    def tsne_stage():
        feats, kept, dropped = score_features(table)
        keys = [str(n) for n in table.column("model")[kept]]
        aff = compute_affinities(feats, config.perplexity, point_keys=keys)
        params = TsneParams(iterations=config.tsne_iterations)
        bundle.embedding = embed(aff, seed=config.seed, params=params,
                                 point_keys=keys)
        bundle.embedding_rows = _embedding_rows(table, kept, dropped)
        bundle.embedding_rows["x"] = [float(v) for v in
                                      bundle.embedding.coords[:, 0]]
        bundle.embedding_rows["y"] = [float(v) for v in
                                      bundle.embedding.coords[:, 1]]

    run_stage("tsne", tsne_stage)
    return bundle

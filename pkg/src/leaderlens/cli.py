"""Command-line interface.

Exit codes: 0 success, 1 usage error (including argparse failures),
2 data error, 3 numerical failure.
"""

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import __version__
from .anova import run_grouped_tests
from .data import parse_snapshot, summary_stats
from .errors import DataError, NumericalError, UsageError
from .fetch import fetch_snapshot
from .gamm import fit_gamm, fit_to_json, smooth_significance
from .render import render_report
from .suite import (
    _FACTOR_COLUMNS,
    SuiteConfig,
    correlation_matrix,
    derive_columns,
    run_suite,
)
from .svgplot import fnum
from .tsne import TsneParams, compute_affinities, embed, score_features

_GROUP_CHOICES = ("bracket", "type", "arch")


def _csv_out(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["true" if v is True else "false" if v is False
                         else fnum(v) if isinstance(v, float) else v
                         for v in row])
    return buf.getvalue()


def _add_common(parser, with_alpha=False):
    parser.add_argument("--input", required=True, help="snapshot file")
    parser.add_argument("--format", default="csv",
                        choices=("csv", "json-lines"))
    parser.add_argument("--schema", default="default",
                        help="default | appendix-d | path to schema JSON")
    parser.add_argument("--log-policy", default="exclude",
                        help="exclude | offset=E")
    if with_alpha:
        parser.add_argument("--alpha", type=float, default=0.05)


def _load_table(args, derive=False):
    try:
        raw = Path(args.input).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read snapshot {args.input}: {exc}") from exc
    if args.schema in ("default", "appendix-d"):
        from .schema import get_schema
        schema = get_schema(args.schema)
    else:
        from .schema import schema_from_file
        schema = schema_from_file(args.schema)
    table = parse_snapshot(raw, args.format, schema)
    if derive:
        table = derive_columns(table, args.log_policy)
    return table


def cmd_fetch(args) -> int:
    res = fetch_snapshot(args.url, cache_dir=args.cache_dir,
                         offline=args.offline)
    print(json.dumps({"path": str(res.path), "sha256": res.sha256,
                      "from_cache": res.from_cache}, sort_keys=True))
    return 0


def cmd_describe(args) -> int:
    table = _load_table(args)
    meta = table.metadata
    print(f"records: {len(table)} (schema {table.schema.name})")
    print(f"dropped zero-param rows: {meta.get('n_dropped_zero_params', 0)}, "
          f"skipped rows: {meta.get('n_skipped', 0)}")
    for factor in ("type", "arch_category", "param_bracket"):
        col = table.column(factor)
        levels = sorted(set(str(v) for v in col))
        counts = ", ".join(f"{lev or '(blank)'}={sum(col == lev)}"
                           for lev in levels)
        print(f"{factor}: {counts}")
    for bench in table.schema.benchmark_names:
        st = summary_stats(table, bench)
        missing = int(table.missing_mask(bench).sum())
        print(f"{bench}: mean={st.mean:.2f} sd={st.sd:.2f} "
              f"min={st.min:.2f} max={st.max:.2f} missing={missing}")
    return 0


def cmd_corr(args) -> int:
    table = _load_table(args)
    cols = table.schema.benchmark_names
    matrix = correlation_matrix(table, cols)
    rows = [[cols[i]] + [float(v) for v in row]
            for i, row in enumerate(matrix)]
    sys.stdout.write(_csv_out(["benchmark"] + list(cols), rows))
    return 0


def _grouped_reports(args):
    table = _load_table(args)
    factor = _FACTOR_COLUMNS[args.group_by]
    return run_grouped_tests(table, factor, alpha=args.alpha,
                             force_pairwise=args.command == "tukey")


def cmd_anova(args) -> int:
    rows = []
    for rep in _grouped_reports(args):
        a = rep.anova
        rows.append([rep.benchmark, a.f_stat, a.df_between, a.df_within,
                     a.p, ";".join(rep.dropped_levels)])
    sys.stdout.write(_csv_out(
        ["benchmark", "f_stat", "df_between", "df_within", "p",
         "dropped_levels"], rows))
    return 0


def cmd_tukey(args) -> int:
    rows = []
    for rep in _grouped_reports(args):
        for c in rep.comparisons:
            rows.append([rep.benchmark, c.level_a, c.level_b, c.mean_diff,
                         c.se, c.q_stat, c.p_adj, c.ci_low, c.ci_high,
                         c.significant])
    sys.stdout.write(_csv_out(
        ["benchmark", "level_a", "level_b", "mean_diff", "se", "q", "p_adj",
         "ci_low", "ci_high", "significant"], rows))
    return 0


def cmd_gamm(args) -> int:
    table = _load_table(args, derive=True)
    fit = fit_gamm(args.formula, table)
    print(fit_to_json(fit))
    return 0


def cmd_interplay(args) -> int:
    table = _load_table(args, derive=True)
    benches = table.schema.benchmark_names
    rows = []
    for b in benches:
        others = [o for o in benches if o != b]
        smooths = " + ".join(f"s(log_{o})" for o in others)
        fit = fit_gamm(f"log_{b} ~ {smooths} + re(arch_category)", table)
        for term in fit.term_ids(penalized_only=True):
            rows.append([b, term, fit.edf[term],
                         smooth_significance(fit, term), fit.n_used,
                         len(fit.dropped_records)])
    sys.stdout.write(_csv_out(
        ["benchmark", "term", "edf", "p", "n_used", "n_dropped"], rows))
    return 0


def cmd_tsne(args) -> int:
    table = _load_table(args)
    feats, kept, dropped = score_features(table)
    names = table.column("model")
    keys = [str(names[i]) for i in kept]
    aff = compute_affinities(feats, args.perplexity, point_keys=keys)
    emb = embed(aff, seed=args.seed,
                params=TsneParams(iterations=args.iterations),
                point_keys=keys)
    bracket = table.column("param_bracket")[kept]
    ttype = table.column("type")[kept]
    arch = table.column("arch_category")[kept]
    rows = [[keys[i], float(emb.coords[i, 0]), float(emb.coords[i, 1]),
             str(bracket[i]), str(ttype[i]), str(arch[i])]
            for i in range(len(kept))]
    sys.stdout.write(_csv_out(["model", "x", "y", "bracket", "type", "arch"],
                              rows))
    if len(dropped):
        print(f"# excluded {len(dropped)} records with incomplete scores",
              file=sys.stderr)
    return 0


def cmd_suite(args) -> int:
    if args.config:
        config = SuiteConfig.from_json(args.config)
        overrides = {}
        if args.input:
            overrides["input_path"] = args.input
        if args.out:
            overrides["out_dir"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            from dataclasses import replace
            config = replace(config, **overrides)
    else:
        if not args.input:
            raise UsageError("suite needs --config or --input")
        config = SuiteConfig(
            input_path=args.input,
            out_dir=args.out or "leaderlens-out",
            seed=args.seed if args.seed is not None else 0,
            alpha=args.alpha,
            weight_mode=args.weights,
            log_policy=args.log_policy,
            schema=args.schema,
            format=args.format,
        )
    bundle = run_suite(config)
    manifest = render_report(bundle, config.out_dir)
    for entry in manifest:
        print(f"{entry['bytes']:>10}  {entry['path']}")
    for warning in bundle.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def cmd_render(args) -> int:
    try:
        with open(args.report, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read report {args.report}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"report {args.report} is not valid JSON: "
                        f"{exc}") from exc
    manifest = render_report(doc, args.out)
    for entry in manifest:
        print(f"{entry['bytes']:>10}  {entry['path']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leaderlens",
        description="Re-analysis toolkit for LLM leaderboard snapshots")
    parser.add_argument("--version", action="version",
                        version=f"leaderlens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download a snapshot into the cache")
    p.add_argument("url")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--offline", action="store_true")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("describe", help="snapshot shape and score summary")
    _add_common(p)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("corr", help="benchmark correlation matrix (CSV)")
    _add_common(p)
    p.set_defaults(func=cmd_corr)

    for name, helptext, func in (
            ("anova", "one-way ANOVA per benchmark", cmd_anova),
            ("tukey", "all pairwise Tukey comparisons", cmd_tukey)):
        p = sub.add_parser(name, help=helptext)
        _add_common(p, with_alpha=True)
        p.add_argument("--group-by", required=True, choices=_GROUP_CHOICES)
        p.set_defaults(func=func)

    p = sub.add_parser("gamm", help="fit one additive model")
    _add_common(p)
    p.add_argument("--formula", required=True,
                   help='e.g. "log_MMLU ~ s(log_params_b) + re(arch_category)"')
    p.set_defaults(func=cmd_gamm)

    p = sub.add_parser("interplay",
                       help="cross-benchmark smooth battery (CSV)")
    _add_common(p)
    p.set_defaults(func=cmd_interplay)

    p = sub.add_parser("tsne", help="2-D embedding of score profiles (CSV)")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.set_defaults(func=cmd_tsne)

    p = sub.add_parser("suite", help="run every stage and render the report")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--input", default=None)
    p.add_argument("--format", default="csv", choices=("csv", "json-lines"))
    p.add_argument("--schema", default="default")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--weights", default="none",
                   choices=("none", "arch-balance", "score-rescale"))
    p.add_argument("--log-policy", default="exclude")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("render", help="re-render artifacts from report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage problems; our contract says 1
        return 0 if exc.code == 0 else 1
    try:
        code = args.func(args)
        sys.stdout.flush()  # surface EPIPE here, not during shutdown
        return code
    except BrokenPipeError:
        # downstream closed the pipe (e.g. | head); point stdout at devnull
        # so interpreter shutdown does not raise again while flushing
        try:
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        except (OSError, ValueError, io.UnsupportedOperation):
            pass
        return 1
    except UsageError as exc:
        print(f"leaderlens: usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"leaderlens: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"leaderlens: numerical failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

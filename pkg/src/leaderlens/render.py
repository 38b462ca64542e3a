"""Report rendering: report.json, summary.md, CSV tables, SVG plots.

Renders from the serializable report document (the same dict that becomes
``report.json``), so a saved report re-renders without refitting anything.
All output is byte-stable: fixed file set, fixed row ordering, one float
format, and SVG elements emitted in construction order.
"""

import csv
import io
from pathlib import Path

from .errors import UsageError
from .suite import ReportBundle, doc_to_json_bytes
from .svgplot import Frame, Svg, color_for, diverging_color, fnum, nice_ticks


class IoError(UsageError):
    """Output directory is not writable or a file write failed."""


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return fnum(value) if value == value else "NA"
    if value is None:
        return "NA"
    return str(value)


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue().encode("utf-8")


def render_report(bundle, out_dir) -> list:
    """Write the full artifact set; return [{path, bytes}, ...] sorted by path."""
    doc = bundle.to_doc() if isinstance(bundle, ReportBundle) else bundle
    out = Path(out_dir)
    files = {}

    files["report.json"] = doc_to_json_bytes(doc)
    files["summary.md"] = _summary_md(doc)

    corr = doc.get("correlations")
    if corr:
        files["tables/correlations.csv"] = _corr_csv(corr)
        files["plots/corr_heatmap.svg"] = _corr_heatmap_svg(corr)

    grouped = doc.get("grouped_tests") or []
    if grouped:
        files["tables/anova.csv"] = _anova_csv(grouped)
        for factor in sorted({g["factor"] for g in grouped}):
            files[f"tables/tukey_{factor}.csv"] = _tukey_csv(grouped, factor)

    gamm = (doc.get("fits") or {}).get("gamm") or {}
    if gamm or any((doc.get("fits") or {}).values()):
        files["tables/gamm_terms.csv"] = _gamm_terms_csv(doc)
    for bench, fit in gamm.items():
        partial = fit.get("partials", {}).get("s(log_params_b)")
        if partial is None:
            continue
        files[f"tables/partial_{bench}.csv"] = _partial_csv(partial)
        files[f"tables/partial_{bench}_marks.csv"] = _marks_csv(partial)
        files[f"plots/partial_{bench}.svg"] = _partial_svg(partial, bench)

    emb = doc.get("embedding")
    if emb:
        files["tables/embedding.csv"] = _embedding_csv(emb)
        for factor in ("bracket", "type", "arch"):
            files[f"plots/tsne_{factor}.svg"] = _tsne_svg(emb, factor)

    manifest = []
    try:
        for rel in sorted(files):
            path = out / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(files[rel])
            manifest.append({"path": rel, "bytes": len(files[rel])})
    except OSError as exc:
        raise IoError(f"cannot write under {out}: {exc}") from exc
    return manifest


# --- tables ---------------------------------------------------------------

def _corr_csv(corr: dict) -> bytes:
    cols = corr["columns"]
    rows = [[cols[i]] + list(row) for i, row in enumerate(corr["matrix"])]
    return _csv_bytes(["benchmark"] + list(cols), rows)


def _anova_csv(grouped: list) -> bytes:
    rows = []
    for g in grouped:
        a = g["anova"]
        rows.append([g["factor"], g["benchmark"], a["f_stat"],
                     a["df_between"], a["df_within"], a["p"],
                     ";".join(g.get("dropped_levels") or [])])
    return _csv_bytes(["factor", "benchmark", "f_stat", "df_between",
                       "df_within", "p", "dropped_levels"], rows)


def _tukey_csv(grouped: list, factor: str) -> bytes:
    rows = []
    for g in grouped:
        if g["factor"] != factor:
            continue
        for c in g["comparisons"]:
            rows.append([g["benchmark"], c["level_a"], c["level_b"],
                         c["mean_diff"], c["se"], c["q_stat"], c["p_adj"],
                         c["ci_low"], c["ci_high"], c["significant"]])
    return _csv_bytes(["benchmark", "level_a", "level_b", "mean_diff", "se",
                       "q", "p_adj", "ci_low", "ci_high", "significant"],
                      rows)


def _gamm_terms_csv(doc: dict) -> bytes:
    rows = []
    for variant, fits_key in (("default", "fits"), ("weighted", "fits_weighted")):
        stages = doc.get(fits_key) or {}
        for stage in ("gamm", "by_type", "interplay"):
            for bench, fit in sorted((stages.get(stage) or {}).items()):
                for term, edf in sorted(fit["edf"].items()):
                    rows.append([
                        variant, stage, bench, term, edf,
                        fit["p_values"].get(term),
                        fit["lambda"].get(term),
                        fit["n_used"], fit["n_dropped"],
                    ])
    return _csv_bytes(["variant", "stage", "benchmark", "term", "edf", "p",
                       "lambda", "n_used", "n_dropped"], rows)


def _partial_csv(partial: dict) -> bytes:
    rows = zip(partial["grid"], partial["estimate"], partial["ci_low"],
               partial["ci_high"])
    return _csv_bytes(["x", "estimate", "ci_low", "ci_high"], rows)


def _marks_csv(partial: dict) -> bytes:
    return _csv_bytes(["fraction", "x"],
                      [list(m) for m in partial["quantile_marks"]])


def _embedding_csv(emb: dict) -> bytes:
    rows = zip(emb["models"], emb["x"], emb["y"], emb["bracket"],
               emb["type"], emb["arch"])
    return _csv_bytes(["model", "x", "y", "bracket", "type", "arch"], rows)


# --- plots ----------------------------------------------------------------

def _partial_svg(partial: dict, bench: str) -> bytes:
    grid = [float(v) for v in partial["grid"]]
    est = [float(v) for v in partial["estimate"]]
    lo = [float(v) for v in partial["ci_low"]]
    hi = [float(v) for v in partial["ci_high"]]
    y_min, y_max = min(lo), max(hi)
    pad = 0.05 * (y_max - y_min or 1.0)
    svg = Svg(560, 360)
    frame = Frame((grid[0], grid[-1]), (y_min - pad, y_max + pad), 560, 360)
    svg.text(280, 22, f"log_{bench} ~ s(log_params_b)", size=14.0,
             anchor="middle")
    band = ([(frame.px(x), frame.py(v)) for x, v in zip(grid, hi)]
            + [(frame.px(x), frame.py(v)) for x, v in zip(grid[::-1], lo[::-1])])
    svg.polygon(band, fill="#4c72b0", opacity=0.25)
    svg.polyline([(frame.px(x), frame.py(v)) for x, v in zip(grid, est)],
                 stroke="#4c72b0", width=2.0)
    bottom = frame.top + frame.inner_height
    for _, x in partial["quantile_marks"]:
        svg.line(frame.px(float(x)), bottom - 8.0, frame.px(float(x)), bottom,
                 stroke="#c44e52", width=1.5)
    svg.axes(frame, x_label="log_params_b", y_label="centered effect")
    return svg.render().encode("utf-8")


def _tsne_svg(emb: dict, factor: str) -> bytes:
    xs = [float(v) for v in emb["x"]]
    ys = [float(v) for v in emb["y"]]
    labels = [str(v) for v in emb[factor]]
    levels = sorted(set(labels))
    color = {lev: color_for(i) for i, lev in enumerate(levels)}
    svg = Svg(560, 460)
    frame = Frame(_padded_range(xs), _padded_range(ys), 560, 460,
                  margin=(30.0, 150.0, 40.0, 55.0))
    svg.text(230, 20, f"t-SNE of benchmark scores, colored by {factor}",
             size=13.0, anchor="middle")
    for x, y, lab in zip(xs, ys, labels):
        svg.circle(frame.px(x), frame.py(y), 2.4, fill=color[lab],
                   opacity=0.8)
    legend_x = frame.left + frame.inner_width + 18.0
    for i, lev in enumerate(levels):
        y = 46.0 + 18.0 * i
        svg.rect(legend_x, y - 8.0, 10.0, 10.0, fill=color[lev])
        svg.text(legend_x + 15.0, y, lev or "(blank)", size=10.0)
    svg.axes(frame, x_label="t-SNE 1", y_label="t-SNE 2")
    return svg.render().encode("utf-8")


def _padded_range(values) -> tuple:
    lo, hi = min(values), max(values)
    pad = 0.05 * ((hi - lo) or 1.0)
    return lo - pad, hi + pad


def _corr_heatmap_svg(corr: dict) -> bytes:
    cols = corr["columns"]
    matrix = corr["matrix"]
    k = len(cols)
    cell = 52.0
    left, top = 100.0, 60.0
    svg = Svg(left + cell * k + 20.0, top + cell * k + 20.0)
    svg.text(left + cell * k / 2.0, 24.0, "Benchmark correlations",
             size=14.0, anchor="middle")
    for i in range(k):
        for j in range(k):
            r = float(matrix[i][j])
            x, y = left + cell * j, top + cell * i
            svg.rect(x, y, cell, cell, fill=diverging_color(r),
                     stroke="#ffffff")
            text_fill = "#ffffff" if abs(r) > 0.6 else "#222222"
            svg.text(x + cell / 2.0, y + cell / 2.0 + 4.0, f"{r:.2f}",
                     size=11.0, anchor="middle", fill=text_fill)
    for j, name in enumerate(cols):
        svg.text(left + cell * j + cell / 2.0, top - 8.0, name, size=10.0,
                 anchor="middle")
    for i, name in enumerate(cols):
        svg.text(left - 8.0, top + cell * i + cell / 2.0 + 3.5, name,
                 size=10.0, anchor="end")
    return svg.render().encode("utf-8")


# --- summary --------------------------------------------------------------

def _summary_md(doc: dict) -> bytes:
    meta = doc["metadata"]
    lines = ["# leaderlens report", ""]
    lines.append(f"- tool: leaderlens {meta['version']} "
                 f"(backend: {meta['backend']})")
    lines.append(f"- snapshot sha256: `{meta['snapshot_sha256']}`")
    lines.append(f"- timestamp: {meta['timestamp'] or 'not recorded'}")
    ingest = meta.get("ingest") or {}
    lines.append(f"- records: {ingest.get('n_records')} "
                 f"(dropped zero-param: {ingest.get('n_dropped_zero_params')}, "
                 f"skipped: {ingest.get('n_skipped')})")
    lines.append(f"- config: alpha={meta['config']['alpha']}, "
                 f"weight_mode={meta['config']['weight_mode']}, "
                 f"seed={meta['config']['seed']}")
    lines.append("")

    warnings = doc.get("warnings") or []
    if warnings:
        lines.append("## Warnings")
        lines.extend(f"- {w}" for w in warnings)
        lines.append("")

    grouped = doc.get("grouped_tests") or []
    if grouped:
        lines.append("## Grouped tests")
        lines.append("")
        lines.append("| factor | benchmark | ANOVA p | significant pairs |")
        lines.append("|---|---|---|---|")
        for g in grouped:
            n_sig = sum(1 for c in g["comparisons"] if c["significant"])
            lines.append(f"| {g['factor']} | {g['benchmark']} | "
                         f"{fnum(g['anova']['p'])} | {n_sig} |")
        lines.append("")

    gamm = (doc.get("fits") or {}).get("gamm") or {}
    if gamm:
        lines.append("## Size effect (per benchmark)")
        lines.append("")
        lines.append("| benchmark | EDF s(log_params_b) | p |")
        lines.append("|---|---|---|")
        for bench, fit in sorted(gamm.items()):
            edf = fit["edf"].get("s(log_params_b)")
            p = fit["p_values"].get("s(log_params_b)")
            lines.append(f"| {bench} | {fnum(edf)} | {fnum(p)} |")
        lines.append("")

    corr = doc.get("correlations")
    if corr:
        cols = corr["columns"]
        matrix = corr["matrix"]
        means = []
        for i, name in enumerate(cols):
            others = [abs(matrix[i][j]) for j in range(len(cols)) if j != i]
            means.append((sum(others) / len(others), name))
        low = min(means)
        lines.append("## Correlations")
        lines.append(f"- lowest mean |r| vs the others: {low[1]} "
                     f"({fnum(low[0])})")
        lines.append("")

    emb = doc.get("embedding")
    if emb:
        lines.append("## Embedding")
        lines.append(f"- points: {len(emb['models'])}; "
                     f"excluded (incomplete scores): {len(emb['dropped_models'])}")
        lines.append(f"- final KL: {fnum(emb['kl_trace'][-1])} "
                     f"(seed {emb['seed']})")
        lines.append("")

    return ("\n".join(lines) + "\n").encode("utf-8")

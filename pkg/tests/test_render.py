"""Artifact rendering: file set, byte determinism, CSV headers, SVG shape."""

import json
import xml.etree.ElementTree as ET
from dataclasses import replace

import pytest

from conftest import rows_to_csv, synth_rows
from leaderlens.render import IoError, render_report
from leaderlens.suite import SuiteConfig, run_suite

BENCHES = ("ARC", "HellaSwag", "MMLU", "TruthfulQA", "Winogrande", "GSM8K")


@pytest.fixture(scope="module")
def config(tmp_path_factory):
    path = tmp_path_factory.mktemp("render") / "snap.csv"
    path.write_text(rows_to_csv(synth_rows(400, seed=9)))
    return SuiteConfig(input_path=str(path), tsne_iterations=200)


@pytest.fixture(scope="module")
def bundle(config):
    return run_suite(config)


@pytest.fixture(scope="module")
def out_dir(bundle, tmp_path_factory):
    out = tmp_path_factory.mktemp("render") / "out"
    manifest = render_report(bundle, str(out))
    return out, manifest


def expected_paths():
    paths = ["report.json", "summary.md", "tables/anova.csv",
             "tables/correlations.csv", "tables/embedding.csv",
             "tables/gamm_terms.csv", "plots/corr_heatmap.svg"]
    paths += [f"tables/tukey_{f}.csv" for f in ("arch", "bracket", "type")]
    paths += [f"plots/tsne_{f}.svg" for f in ("arch", "bracket", "type")]
    for b in BENCHES:
        paths += [f"tables/partial_{b}.csv", f"tables/partial_{b}_marks.csv",
                  f"plots/partial_{b}.svg"]
    return sorted(paths)


class TestManifest:
    def test_exact_file_set(self, out_dir):
        out, manifest = out_dir
        assert [m["path"] for m in manifest] == expected_paths()

    def test_sizes_match_disk(self, out_dir):
        out, manifest = out_dir
        for entry in manifest:
            assert (out / entry["path"]).stat().st_size == entry["bytes"]

    def test_rerender_byte_identical(self, bundle, out_dir, tmp_path):
        out, manifest = out_dir
        again = render_report(bundle, str(tmp_path / "out2"))
        assert [m["path"] for m in again] == [m["path"] for m in manifest]
        for entry in manifest:
            a = (out / entry["path"]).read_bytes()
            b = (tmp_path / "out2" / entry["path"]).read_bytes()
            assert a == b, entry["path"]

    def test_render_from_loaded_report(self, out_dir, tmp_path):
        out, manifest = out_dir
        doc = json.loads((out / "report.json").read_text())
        again = render_report(doc, str(tmp_path / "out3"))
        for entry in again:
            a = (out / entry["path"]).read_bytes()
            b = (tmp_path / "out3" / entry["path"]).read_bytes()
            assert a == b, entry["path"]

    def test_out_dir_collision_raises(self, bundle, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(IoError):
            render_report(bundle, str(blocker))


class TestTables:
    def test_tukey_header_pinned(self, out_dir):
        out, _ = out_dir
        head = (out / "tables/tukey_type.csv").read_text().splitlines()[0]
        assert head == ("benchmark,level_a,level_b,mean_diff,se,q,p_adj,"
                       "ci_low,ci_high,significant")

    def test_anova_rows(self, out_dir):
        out, _ = out_dir
        lines = (out / "tables/anova.csv").read_text().splitlines()
        assert lines[0] == ("factor,benchmark,f_stat,df_between,df_within,"
                           "p,dropped_levels")
        assert len(lines) == 1 + 18  # 3 factors x 6 benchmarks

    def test_partial_tables(self, out_dir):
        out, _ = out_dir
        lines = (out / "tables/partial_ARC.csv").read_text().splitlines()
        assert lines[0] == "x,estimate,ci_low,ci_high"
        assert len(lines) == 101
        marks = (out / "tables/partial_ARC_marks.csv").read_text().splitlines()
        assert marks[0] == "fraction,x"
        fractions = [row.split(",")[0] for row in marks[1:]]
        assert fractions == ["0", "0.2", "0.4", "0.6", "0.8", "1"]

    def test_embedding_table(self, out_dir):
        out, _ = out_dir
        lines = (out / "tables/embedding.csv").read_text().splitlines()
        assert lines[0] == "model,x,y,bracket,type,arch"
        assert len(lines) == 1 + 400

    def test_gamm_terms_covers_all_stages(self, out_dir):
        out, _ = out_dir
        lines = (out / "tables/gamm_terms.csv").read_text().splitlines()
        assert lines[0] == "variant,stage,benchmark,term,edf,p,lambda,n_used,n_dropped"
        stages = {row.split(",")[1] for row in lines[1:]}
        assert stages == {"gamm", "by_type", "interplay"}


class TestSvgAndSummary:
    def test_all_svgs_parse(self, out_dir):
        out, manifest = out_dir
        for entry in manifest:
            if entry["path"].endswith(".svg"):
                root = ET.fromstring((out / entry["path"]).read_bytes())
                assert root.tag.endswith("svg")

    def test_summary_mentions_inputs(self, bundle, out_dir):
        out, _ = out_dir
        text = (out / "summary.md").read_text()
        assert bundle.metadata["snapshot_sha256"] in text
        assert "## Grouped tests" in text
        assert "## Size effect (per benchmark)" in text
        assert "lowest mean |r| vs the others" in text
        assert "## Embedding" in text
        assert "## Warnings" not in text  # clean run

    def test_skipped_stage_drops_files(self, config, tmp_path):
        partial = run_suite(replace(config, stages=("corr", "grouped")))
        manifest = render_report(partial, str(tmp_path / "out"))
        paths = [m["path"] for m in manifest]
        assert "tables/embedding.csv" not in paths
        assert not any(p.startswith("plots/tsne_") for p in paths)
        assert not any("partial" in p for p in paths)
        text = (tmp_path / "out" / "summary.md").read_text()
        assert "## Warnings" in text
        assert "stage tsne skipped: not requested" in text

"""Suite orchestration: stage contracts, determinism, weight scoping."""

import json
from dataclasses import replace
from hashlib import sha256

import numpy as np
import pytest

from conftest import rows_to_csv, synth_rows
from leaderlens.data import parse_snapshot
from leaderlens.errors import DataError, UsageError
from leaderlens.suite import (
    InsufficientOverlap,
    SuiteConfig,
    correlation_matrix,
    run_suite,
)

N_ROWS = 400  # big enough that every training-type level supports a by-smooth


@pytest.fixture(scope="module")
def snap_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("suite") / "snap.csv"
    path.write_text(rows_to_csv(synth_rows(N_ROWS, seed=9)))
    return path


@pytest.fixture(scope="module")
def base_config(snap_path):
    return SuiteConfig(input_path=str(snap_path), tsne_iterations=250)


@pytest.fixture(scope="module")
def base_bundle(base_config):
    return run_suite(base_config)


@pytest.fixture(scope="module")
def parsed_table(snap_path):
    return parse_snapshot(snap_path.read_bytes(), "csv")


class TestCorrelationMatrix:
    def test_self_and_negation(self, parsed_table):
        arc = parsed_table.numeric_column("ARC")
        t = parsed_table.with_derived("neg", -arc)
        m = correlation_matrix(t, ["ARC", "neg"])
        assert m[0, 0] == 1.0 and m[1, 1] == 1.0
        assert abs(m[0, 1] + 1.0) <= 1e-12

    def test_matrix_invariants(self, parsed_table):
        m = correlation_matrix(parsed_table)
        assert m.shape == (6, 6)
        assert np.array_equal(m, m.T)
        assert np.all(np.diag(m) == 1.0)
        assert np.all(m >= -1.0) and np.all(m <= 1.0)
        # complete-case data: PSD up to roundoff
        assert np.linalg.eigvalsh(m).min() >= -1e-8

    def test_pairwise_complete_uses_overlap(self, parsed_table):
        a = parsed_table.numeric_column("ARC").copy()
        b = parsed_table.numeric_column("MMLU").copy()
        a[: N_ROWS // 2] = np.nan
        b[N_ROWS // 2 + 3:] = np.nan  # 3 rows overlap
        t = parsed_table.with_derived("a", a).with_derived("b", b)
        m = correlation_matrix(t, ["a", "b"])
        assert np.isfinite(m[0, 1])
        b[N_ROWS // 2:] = np.nan  # now zero overlap
        t = parsed_table.with_derived("a", a).with_derived("b", b)
        with pytest.raises(InsufficientOverlap):
            correlation_matrix(t, ["a", "b"])

    def test_single_column_rejected(self, parsed_table):
        with pytest.raises(DataError):
            correlation_matrix(parsed_table, ["ARC"])


class TestConfig:
    def test_alpha_bounds(self, snap_path):
        with pytest.raises(UsageError):
            SuiteConfig(input_path=str(snap_path), alpha=1.5)

    def test_bad_weight_mode(self, snap_path):
        with pytest.raises(UsageError):
            SuiteConfig(input_path=str(snap_path), weight_mode="balanced")

    def test_bad_factor_and_stage(self, snap_path):
        with pytest.raises(UsageError):
            SuiteConfig(input_path=str(snap_path), factors=("bracket", "license"))
        with pytest.raises(UsageError):
            SuiteConfig(input_path=str(snap_path), stages=("corr", "umap"))

    def test_bad_log_policy(self, snap_path):
        with pytest.raises(UsageError):
            SuiteConfig(input_path=str(snap_path), log_policy="offset=zero")
        with pytest.raises(UsageError):
            SuiteConfig(input_path=str(snap_path), log_policy="drop")

    def test_from_dict_aliases_and_unknown_keys(self):
        cfg = SuiteConfig.from_dict({"input": "x.csv", "out": "res",
                                     "weights": "arch-balance",
                                     "factors": ["type"]})
        assert cfg.input_path == "x.csv"
        assert cfg.out_dir == "res"
        assert cfg.weight_mode == "arch-balance"
        assert cfg.factors == ("type",)
        with pytest.raises(UsageError):
            SuiteConfig.from_dict({"input": "x.csv", "perplexity_factor": 3})

    def test_from_json_resolves_relative_paths(self, tmp_path, snap_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"input": "snap.csv", "out": "res"}))
        (tmp_path / "snap.csv").write_text(snap_path.read_text())
        cfg = SuiteConfig.from_json(str(cfg_path))
        assert cfg.input_path == str(tmp_path / "snap.csv")
        assert cfg.out_dir == str(tmp_path / "res")

    def test_missing_snapshot_is_fatal(self, tmp_path):
        cfg = SuiteConfig(input_path=str(tmp_path / "nope.csv"))
        with pytest.raises(DataError):
            run_suite(cfg)


class TestSuiteRun:
    def test_counting_contract(self, base_bundle):
        assert base_bundle.warnings == []
        assert len(base_bundle.grouped_tests) == 18
        assert sorted({r.factor for r in base_bundle.grouped_tests}) == [
            "arch", "bracket", "type"]
        assert len(base_bundle.gamm_fits) == 6
        assert len(base_bundle.by_type_fits) == 6
        assert len(base_bundle.interplay_fits) == 6
        assert base_bundle.correlations is not None
        assert base_bundle.embedding is not None
        assert len(base_bundle.embedding_rows["models"]) == N_ROWS

    def test_metadata(self, base_bundle, snap_path, base_config):
        meta = base_bundle.metadata
        assert meta["snapshot_sha256"] == sha256(snap_path.read_bytes()).hexdigest()
        assert meta["timestamp"] is None  # no SOURCE_DATE_EPOCH set
        assert meta["config"]["seed"] == base_config.seed
        assert meta["ingest"]["n_records"] == N_ROWS

    def test_timestamp_from_source_date_epoch(self, snap_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
        cfg = SuiteConfig(input_path=str(snap_path), stages=("corr",))
        bundle = run_suite(cfg)
        assert bundle.metadata["timestamp"] == "2023-11-14T22:13:20+00:00"

    def test_formulas_recorded(self, base_bundle):
        doc = base_bundle.to_doc()
        assert (doc["fits"]["gamm"]["ARC"]["formula"]
                == "log_ARC ~ s(log_params_b) + re(arch_category)")
        assert "s(log_params_b, by=type)" in doc["fits"]["by_type"]["ARC"]["formula"]
        inter = doc["fits"]["interplay"]["ARC"]["formula"]
        assert "s(log_ARC)" not in inter
        for other in ("HellaSwag", "MMLU", "TruthfulQA", "Winogrande", "GSM8K"):
            assert f"s(log_{other})" in inter

    def test_rerun_byte_identical(self, base_config, base_bundle):
        again = run_suite(base_config)
        assert again.to_json_bytes() == base_bundle.to_json_bytes()

    def test_stage_isolation(self, base_config, base_bundle):
        partial = run_suite(replace(
            base_config, stages=("corr", "grouped", "gamm", "by_type",
                                 "interplay")))
        assert partial.embedding is None
        assert any("tsne" in w and "skipped" in w for w in partial.warnings)
        full_doc = base_bundle.to_doc()
        part_doc = partial.to_doc()
        for key in ("fits", "grouped_tests", "correlations"):
            assert part_doc[key] == full_doc[key]

    def test_gsm8k_zeros_dropped_from_its_fit(self, base_bundle, parsed_table):
        zeros = int((parsed_table.column("GSM8K") == 0.0).sum())
        assert zeros > 10  # generator salts GSM8K with exact zeros
        fit = base_bundle.gamm_fits["GSM8K"]
        assert len(fit.dropped_records) == zeros
        assert fit.n_used == N_ROWS - zeros

    def test_log_offset_policy_keeps_zeros(self, snap_path, base_bundle):
        cfg = SuiteConfig(input_path=str(snap_path), stages=("gamm",),
                          log_policy="offset=0.5")
        bundle = run_suite(cfg)
        assert (bundle.gamm_fits["GSM8K"].n_used
                > base_bundle.gamm_fits["GSM8K"].n_used)


@pytest.fixture(scope="module")
def balanced(snap_path):
    cfg = SuiteConfig(input_path=str(snap_path),
                      stages=("grouped", "gamm"),
                      weight_mode="arch-balance")
    return run_suite(cfg)


class TestWeightModes:
    def test_grouped_tests_never_weighted(self, balanced, base_bundle):
        base = [r for r in base_bundle.grouped_tests]
        bal = balanced.grouped_tests
        assert len(base) == len(bal)
        for a, b in zip(base, bal):
            assert a.factor == b.factor and a.benchmark == b.benchmark
            assert a.anova.f_stat == b.anova.f_stat
            assert a.anova.p == b.anova.p

    def test_both_variants_stored(self, balanced):
        assert set(balanced.weighted_fits) == {"gamm"}
        assert len(balanced.weighted_fits["gamm"]) == 6
        assert len(balanced.gamm_fits) == 6

    def test_weights_change_the_fit(self, balanced):
        plain = balanced.gamm_fits["MMLU"]
        weighted = balanced.weighted_fits["gamm"]["MMLU"]
        assert not np.allclose(plain.coefficients, weighted.coefficients)

    def test_score_rescale_variant(self, snap_path, balanced):
        cfg = SuiteConfig(input_path=str(snap_path), stages=("gamm",),
                          weight_mode="score-rescale")
        bundle = run_suite(cfg)
        rescaled = bundle.weighted_fits["gamm"]["MMLU"]
        case_weighted = balanced.weighted_fits["gamm"]["MMLU"]
        # the two readings of the balancing rerun are genuinely different
        assert not np.allclose(rescaled.coefficients,
                               case_weighted.coefficients)


class TestEmbeddingStage:
    def test_incomplete_rows_excluded_and_listed(self, tmp_path):
        rows = synth_rows(80, seed=3)
        csv_text = rows_to_csv(rows)
        csv_text += "org/holey,5.0,fine-tune,LlamaForCausalLM,50,51,52,49,48,\n"
        path = tmp_path / "holey.csv"
        path.write_text(csv_text)
        cfg = SuiteConfig(input_path=str(path), stages=("tsne",),
                          perplexity=15.0, tsne_iterations=60)
        bundle = run_suite(cfg)
        assert bundle.embedding_rows["dropped_models"] == ["org/holey"]
        assert len(bundle.embedding_rows["models"]) == 80
        assert len(bundle.embedding_rows["x"]) == 80

"""Config parsing, pipeline orchestration, report emission, and the CLI."""

import hashlib
import json
import re
from pathlib import Path

import numpy as np
import pytest

from magwell.cli import main
from magwell.config import ExperimentConfig
from magwell.errors import ConfigError, PipelineError, ValidationError
from magwell.pipeline import (
    ComparisonReport,
    compare_spectra,
    emit_report,
    run_pipeline,
)
from magwell.spectra import SpectrumResult

TINY = """
[model]
name = A

[discretization]
h_list = 0.05
energy_window = 0.59, 0.72
x_points = 81
xi_points = 95
modes = 128
action_samples = 9
curve_samples = 17
tube_x_points = 141
tube_t_points = 61
%s

[solver]
count = 4

[outputs]
directory = %s
emit_plots = true
"""

MINIMAL = """
[model]
name = A

[discretization]
h_list = 0.05, 0.02
energy_window = 0.59, 0.72

[outputs]
directory = runs
"""


def tiny_text(outputs, extra=""):
    return TINY % (extra, outputs)


def spectrum(values, h=0.05, method="test", tol=1e-10):
    vals = np.asarray(values, dtype=float)
    return SpectrumResult(
        values=vals,
        h=h,
        method=method,
        resolution=(8,),
        residual_norms=np.zeros_like(vals),
        metadata={"tol": tol},
    )


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    outputs = tmp_path_factory.mktemp("runs")
    config = ExperimentConfig.from_text(tiny_text(outputs))
    manifest = run_pipeline(config)
    return config, manifest


@pytest.fixture(scope="module")
def tiny_report(tiny_run):
    _, manifest = tiny_run
    paths = emit_report(manifest)
    return manifest, {p.name: p for p in paths}


@pytest.fixture(scope="module")
def cli_config_file(tiny_run, tmp_path_factory):
    config, _ = tiny_run
    path = tmp_path_factory.mktemp("cli") / "experiment.ini"
    path.write_text(tiny_text(config.outputs_dir))
    return path


class TestConfig:
    def test_defaults(self):
        config = ExperimentConfig.from_text(MINIMAL)
        assert config.model_name == "A"
        assert config.h_list == (0.05, 0.02)
        assert config.bands == 1
        assert config.x_points == 161
        assert config.xi_window == (-0.55, 1.35)
        assert config.modes == 256
        assert config.method == "shift_invert"
        assert config.tube_x_points == 301
        assert config.emit_plots is False
        config.validate()

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="unknown sections"):
            ExperimentConfig.from_text(MINIMAL + "\n[extra]\nfoo = 1\n")

    def test_unknown_key_rejected(self):
        bad = MINIMAL.replace("energy_window", "energy_windw")
        with pytest.raises(ConfigError, match="unknown keys"):
            ExperimentConfig.from_text(bad)

    def test_missing_required_key(self):
        bad = "\n".join(
            line for line in MINIMAL.splitlines() if "energy" not in line
        )
        with pytest.raises(ConfigError, match="missing required"):
            ExperimentConfig.from_text(bad)

    def test_inline_model(self):
        text = MINIMAL.replace(
            "name = A", "name = inline\nkind = C\nk0 = 0.1"
        )
        config = ExperimentConfig.from_text(text)
        assert config.model_name == "C"
        assert config.model_parameters == {"k0": 0.1}
        model = config.model()
        assert float(model.geometry.curvature(0.0)) == pytest.approx(0.1)

    def test_inline_parameters_need_inline_name(self):
        text = MINIMAL.replace("name = A", "name = A\nk0 = 0.1")
        with pytest.raises(ConfigError, match="require name = inline"):
            ExperimentConfig.from_text(text)

    def test_inline_parameter_unknown_to_factory(self):
        text = MINIMAL.replace(
            "name = A", "name = inline\nkind = B\nk0 = 0.1"
        )
        config = ExperimentConfig.from_text(text)
        with pytest.raises(ConfigError, match="does not accept"):
            config.model()

    def test_h_list_must_decrease(self):
        bad = MINIMAL.replace("0.05, 0.02", "0.02, 0.05")
        with pytest.raises(ConfigError, match="strictly decreasing"):
            ExperimentConfig.from_text(bad).validate()

    def test_window_below_continuum_proxy(self):
        bad = MINIMAL.replace("0.59, 0.72", "0.59, 0.85")
        with pytest.raises(ConfigError, match="essential-spectrum"):
            ExperimentConfig.from_text(bad).validate()

    def test_modes_must_be_even(self):
        bad = MINIMAL + "\n"
        config = ExperimentConfig.from_text(
            bad.replace("energy_window = 0.59, 0.72",
                        "energy_window = 0.59, 0.72\nmodes = 65")
        )
        with pytest.raises(ConfigError, match="even integer"):
            config.validate()

    def test_method_whitelist(self):
        text = MINIMAL + "\n[solver]\nmethod = magic\n"
        with pytest.raises(ConfigError, match="shift_invert or lobpcg"):
            ExperimentConfig.from_text(text).validate()

    def test_bool_values(self):
        text = MINIMAL.replace(
            "directory = runs", "directory = runs\nemit_plots = yes"
        )
        assert ExperimentConfig.from_text(text).emit_plots is True
        bad = text.replace("yes", "maybe")
        with pytest.raises(ConfigError, match="boolean"):
            ExperimentConfig.from_text(bad)

    def test_content_hash_is_stable_and_sensitive(self):
        first = ExperimentConfig.from_text(MINIMAL)
        second = ExperimentConfig.from_text(MINIMAL)
        assert first.content_hash() == second.content_hash()
        changed = ExperimentConfig.from_text(
            MINIMAL.replace("0.05, 0.02", "0.05")
        )
        assert changed.content_hash() != first.content_hash()


class TestCompareSpectra:
    def test_identical_lists(self):
        a = spectrum([0.60, 0.65, 0.70])
        report = compare_spectra(a, a, window=(0.5, 0.8), cluster_tol=1e-3)
        assert report.hausdorff_like == 0.0
        assert report.rank_check is True
        assert report.pairing == ((0, 0), (1, 1), (2, 2))

    def test_small_offset_within_tolerance(self):
        eps = 1e-3
        a = spectrum([0.60, 0.65])
        b = spectrum([0.60 + eps, 0.65 + eps])
        report = compare_spectra(a, b, window=(0.5, 0.8), cluster_tol=5e-3)
        assert report.hausdorff_like == pytest.approx(eps, rel=1e-12)
        assert report.rank_check is True

    def test_doublet_clusters_match_singlets(self):
        a = spectrum([0.60, 0.6002, 0.70, 0.7002], method="direct")
        b = spectrum([0.6001, 0.7001], method="reduced")
        report = compare_spectra(a, b, window=(0.5, 0.8), cluster_tol=0.01)
        assert report.rank_check is True
        assert report.hausdorff_like <= 1e-4
        assert report.spectra[0][0] == "direct"
        assert len(report.spectra[0][1]) == 4

    def test_unequal_counts_reported_not_raised(self):
        a = spectrum([0.60])
        b = spectrum([0.60, 0.70])
        report = compare_spectra(a, b, window=(0.5, 0.8), cluster_tol=1e-3)
        assert report.rank_check is False
        assert "1 vs 2 clusters" in report.note
        swapped = compare_spectra(b, a, window=(0.5, 0.8), cluster_tol=1e-3)
        assert swapped.rank_check is False

    def test_rank_surrogate_symmetric_under_swap(self):
        a = spectrum([0.60, 0.61])
        b = spectrum([0.60, 0.66])
        fwd = compare_spectra(a, b, window=(0.5, 0.8), cluster_tol=5e-3)
        rev = compare_spectra(b, a, window=(0.5, 0.8), cluster_tol=5e-3)
        assert fwd.rank_check is rev.rank_check is False
        assert "rank surrogate" in fwd.note

    def test_window_filters_values(self):
        a = spectrum([0.10, 0.60, 0.95])
        b = spectrum([0.60])
        report = compare_spectra(a, b, window=(0.5, 0.8), cluster_tol=1e-3)
        assert report.spectra[0][1] == (0.60,)
        assert report.rank_check is True

    def test_default_tolerance_from_solver_tol(self):
        a = spectrum([0.600, 0.605], tol=1e-3)
        b = spectrum([0.602], tol=1e-4)
        report = compare_spectra(a, b, window=(0.5, 0.8))
        assert report.cluster_tol == pytest.approx(1e-2)
        assert report.rank_check is True

    def test_window_and_tolerance_validation(self):
        a = spectrum([0.6])
        with pytest.raises(ValidationError, match="increasing"):
            compare_spectra(a, a, window=(0.8, 0.5))
        with pytest.raises(ValidationError, match="positive"):
            compare_spectra(a, a, window=(0.5, 0.8), cluster_tol=0.0)

    def test_report_json_round_trip(self):
        a = spectrum([0.60, 0.6002], method="direct")
        b = spectrum([0.6001], method="reduced")
        report = compare_spectra(a, b, window=(0.5, 0.8), cluster_tol=0.01)
        clone = ComparisonReport.from_json(report.to_json())
        assert clone == report
        with pytest.raises(ValidationError, match="comparison_report"):
            ComparisonReport.from_json(json.dumps({"kind": "other"}))


class TestPipeline:
    def test_run_completes_with_expected_artifacts(self, tiny_run):
        config, manifest = tiny_run
        assert manifest["status"] == "complete"
        expected = {
            "config.json",
            "assumptions.json",
            "critical_band1.json",
            "table_band1.json",
            "harmonic.json",
            "action_band1.json",
            "h_0.05/effective_band1.json",
            "h_0.05/quantized_order0.json",
            "h_0.05/quantized_order1.json",
            "h_0.05/bohr.json",
            "h_0.05/direct2d.json",
            "h_0.05/comparison.json",
        }
        assert set(manifest["artifacts"]) == expected
        assert manifest["comparisons"] == ["h_0.05/comparison.json"]

    def test_run_directory_named_by_config_hash(self, tiny_run):
        config, manifest = tiny_run
        assert Path(manifest["run_dir"]).name == (
            "run_" + config.content_hash()[:12]
        )

    def test_manifest_hashes_match_disk(self, tiny_run):
        _, manifest = tiny_run
        run_dir = Path(manifest["run_dir"])
        for rel, entry in manifest["artifacts"].items():
            digest = hashlib.sha256((run_dir / rel).read_bytes()).hexdigest()
            assert digest == entry["sha256"], rel

    def test_rerun_is_byte_identical(self, tiny_run):
        config, manifest = tiny_run
        again = run_pipeline(config)
        assert {k: v["sha256"] for k, v in again["artifacts"].items()} == {
            k: v["sha256"] for k, v in manifest["artifacts"].items()
        }

    def test_comparison_artifact(self, tiny_run):
        _, manifest = tiny_run
        run_dir = Path(manifest["run_dir"])
        report = ComparisonReport.from_json(
            (run_dir / "h_0.05" / "comparison.json").read_text()
        )
        assert report.window == (0.59, 0.72)
        assert report.rank_check is True
        assert report.hausdorff_like < 5e-3
        tags = {tag for tag, _ in report.spectra}
        assert "weyl_order1" in tags

    def test_quantized_artifact_round_trips(self, tiny_run):
        _, manifest = tiny_run
        run_dir = Path(manifest["run_dir"])
        result = SpectrumResult.from_json(
            (run_dir / "h_0.05" / "quantized_order1.json").read_text()
        )
        assert result.method == "weyl_order1"
        assert result.metadata["order"] == 1
        assert result.values.size >= 1
        assert np.all(result.values <= 0.72)

    def test_window_above_proxy_rejected_before_compute(self, tmp_path):
        text = tiny_text(tmp_path / "out").replace("0.59, 0.72", "0.59, 0.85")
        config = ExperimentConfig.from_text(text)
        with pytest.raises(ConfigError, match="essential-spectrum"):
            run_pipeline(config)
        assert not (tmp_path / "out").exists()

    def test_stage_failure_keeps_partial_artifacts(self, tmp_path):
        text = tiny_text(tmp_path / "out", extra="tube_t_half_width = 30.0")
        config = ExperimentConfig.from_text(text)
        with pytest.raises(PipelineError, match="direct2d"):
            run_pipeline(config)
        run_dir = tmp_path / "out" / ("run_" + config.content_hash()[:12])
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert manifest["failed_stage"].startswith("direct2d")
        assert "critical_band1.json" in manifest["artifacts"]
        assert (run_dir / "critical_band1.json").exists()

    def test_action_stage_failure_names_stage(self, tmp_path):
        text = tiny_text(tmp_path / "out").replace("0.59, 0.72", "0.50, 0.72")
        config = ExperimentConfig.from_text(text)
        with pytest.raises(PipelineError, match="action"):
            run_pipeline(config)


class TestReport:
    def test_expected_files(self, tiny_report):
        _, files = tiny_report
        assert {
            "eigenvalues.csv",
            "predictions.csv",
            "errors_vs_h.csv",
            "summary.json",
            "dispersive_band1.svg",
            "symbol_band1.svg",
            "convergence.svg",
        } <= set(files)

    def test_eigenvalue_rows_round_trip_through_artifacts(self, tiny_report):
        manifest, files = tiny_report
        run_dir = Path(manifest["run_dir"])
        rows = files["eigenvalues.csv"].read_text().strip().splitlines()
        assert rows[0] == "h,source,index,value_rescaled,value_physical"
        by_source = {}
        for row in rows[1:]:
            h, source, index, rescaled, physical = row.split(",")
            by_source.setdefault(source, []).append(
                (float(rescaled), float(physical))
            )
            assert float(physical) == float(rescaled) * float(h) ** (4.0 / 3.0)
        for name in ("direct2d", "quantized_order0", "bohr"):
            doc = json.loads((run_dir / "h_0.05" / ("%s.json" % name)).read_text())
            got = [v for v, _ in by_source.get(doc["method"], [])]
            assert got == doc["values"]

    def test_predictions_match_harmonic_artifact(self, tiny_report):
        manifest, files = tiny_report
        run_dir = Path(manifest["run_dir"])
        harmonic = json.loads((run_dir / "harmonic.json").read_text())
        rows = files["predictions.csv"].read_text().strip().splitlines()
        assert rows[0] == "h,level,lambda_paper,lambda_hessian"
        assert len(rows) == 1 + 3 * len(harmonic["lambda_table"])
        h, level, lam_p, lam_h = rows[1].split(",")
        assert float(lam_p) == harmonic["lambda_table"][h]["c1_paper"][0]
        assert float(lam_h) == harmonic["lambda_table"][h]["c1_hessian"][0]

    def test_summary_contents(self, tiny_report):
        manifest, files = tiny_report
        summary = json.loads(files["summary.json"].read_text())
        assert summary["config_hash"] == manifest["config_hash"]
        assert summary["overall_winner"] in ("c1_paper", "c1_hessian")
        per_h = summary["per_h"]["0.05"]
        assert per_h["rank_check"] is True
        assert per_h["lambda1_direct"] == pytest.approx(0.70, abs=0.02)
        assert summary["error_slope_vs_h"] is None

    def test_dispersive_plot_point_count(self, tiny_report):
        _, files = tiny_report
        text = files["dispersive_band1.svg"].read_text()
        counts = {}
        for marker in re.findall(r'xlink:href="#(m[0-9a-f]+)"', text):
            counts[marker] = counts.get(marker, 0) + 1
        assert 17 in counts.values()

    def test_empty_spectrum_has_no_rows_but_valid_file(self, tiny_report):
        manifest, files = tiny_report
        run_dir = Path(manifest["run_dir"])
        bohr = json.loads((run_dir / "h_0.05" / "bohr.json").read_text())
        rows = files["eigenvalues.csv"].read_text().strip().splitlines()
        bohr_rows = [r for r in rows if ",bohr_sommerfeld," in r]
        assert len(bohr_rows) == len(bohr["values"])

    def test_report_is_deterministic(self, tiny_report):
        manifest, files = tiny_report
        before = {
            name: hashlib.sha256(path.read_bytes()).hexdigest()
            for name, path in files.items()
        }
        emit_report(manifest)
        after = {
            name: hashlib.sha256(path.read_bytes()).hexdigest()
            for name, path in files.items()
        }
        assert after == before

    def test_incomplete_manifest_rejected(self, tiny_run):
        _, manifest = tiny_run
        broken = dict(manifest, status="failed")
        with pytest.raises(ValidationError, match="complete"):
            emit_report(broken)


class TestCli:
    def test_validate_ok(self, cli_config_file, capsys):
        assert main(["validate", str(cli_config_file)]) == 0
        out = capsys.readouterr().out
        assert "ok" in out
        assert "config hash" in out

    def test_validate_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text(MINIMAL.replace("energy_window", "energy_windw"))
        assert main(["validate", str(bad)]) == 2
        assert "validation error" in capsys.readouterr().err

    def test_missing_file_is_io_error(self, tmp_path, capsys):
        assert main(["validate", str(tmp_path / "nope.ini")]) == 4
        assert "i/o error" in capsys.readouterr().err

    def test_run_and_report(self, cli_config_file, tiny_run, capsys):
        config, manifest = tiny_run
        assert main(["run", str(cli_config_file)]) == 0
        out = capsys.readouterr().out
        assert "status: complete" in out
        manifest_path = Path(manifest["run_dir"]) / "manifest.json"
        assert main(["report", str(manifest_path), "--no-plots"]) == 0
        assert (Path(manifest["run_dir"]) / "report" / "summary.json").exists()

    def test_compare_verb(self, tiny_run, tmp_path, capsys):
        _, manifest = tiny_run
        run_dir = Path(manifest["run_dir"])
        a = run_dir / "h_0.05" / "direct2d.json"
        b = run_dir / "h_0.05" / "quantized_order1.json"
        out = tmp_path / "cmp.json"
        rc = main([
            "compare", str(a), str(b),
            "--window", "0.59", "0.72",
            "--cluster-tol", "0.034",
            "--out", str(out),
        ])
        assert rc == 0
        report = ComparisonReport.from_json(out.read_text())
        assert report.rank_check is True
        capsys.readouterr()
        rc = main(["compare", str(a), str(b), "--window", "0.59", "0.72"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["kind"] == "comparison_report"

    def test_compare_rejects_non_spectrum_artifact(self, tiny_run, capsys):
        _, manifest = tiny_run
        run_dir = Path(manifest["run_dir"])
        rc = main([
            "compare", str(run_dir / "config.json"),
            str(run_dir / "h_0.05" / "quantized_order1.json"),
            "--window", "0.59", "0.72",
        ])
        assert rc == 2

    def test_numerical_failure_maps_to_exit_3(self, tmp_path, capsys):
        cfg = tmp_path / "bad_tube.ini"
        cfg.write_text(
            tiny_text(tmp_path / "out", extra="tube_t_half_width = 30.0")
        )
        assert main(["run", str(cfg)]) == 3
        assert "numerical error" in capsys.readouterr().err

    def test_usage_error_exits_2(self):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 2

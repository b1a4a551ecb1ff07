"""CLI tests for the vscope pipeline."""

from __future__ import annotations

import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conftest import make_dataset
from viseme_scope.cli import (
    EXIT_JOB_FAILED,
    EXIT_OK,
    RunConfig,
    RunManifest,
    _ProbeJob,
    _run_jobs,
    _run_probe_job,
    build_parser,
    derive_seed,
    main,
    resolve_config,
)
from viseme_scope.errors import ClassTooSmall, ConfigError
from viseme_scope.probe import ProbeConfig

SYNTH_FLAGS = [
    "--synth.tokens_per_class", "12",
    "--synth.dim", "16",
    "--synth.max_frames", "6",
    "--synth.segments_per_utterance", "10",
    "--condition", "clean-av=8",
    "--condition", "video-only=3",
    "--layers", "0", "1",
]

FAST_TSNE_FLAGS = [
    "--tsne.perplexity", "5",
    "--tsne.n_iter", "200",
    "--tsne.exaggeration_iters", "50",
    "--tsne.momentum_switch_iter", "50",
    "--tsne.learning_rate", "100",
    "--restarts", "1",
    "--trust-k", "5",
]

FAST_PROBE_FLAGS = [
    "--probe.hidden_units", "16",
    "--probe.max_epochs", "5",
    "--probe.batch_size", "32",
]


def vscope(*args: str, env: dict[str, str] | None = None) -> subprocess.CompletedProcess[str]:
    return subprocess.run(
        [sys.executable, "-m", "viseme_scope.cli", *args],
        capture_output=True,
        text=True,
        env=env,
    )


@pytest.fixture(scope="module")
def workdir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Synthetic corpus plus its feature cache, built once through the CLI."""
    out = tmp_path_factory.mktemp("work")
    result = vscope("synth", "--out", str(out), *SYNTH_FLAGS)
    assert result.returncode == 0, f"CLI failed: {result.stderr}"
    result = vscope(
        "build-features",
        "--manifest", str(out / "manifest.json"),
        "--alignment", str(out / "alignment.csv"),
        "--out", str(out),
    )
    assert result.returncode == 0, f"CLI failed: {result.stderr}"
    return out


# =============================================================================
# Unit Tests: seeds and config resolution
# =============================================================================


class TestDeriveSeed:
    """Unit tests for derive_seed() function."""

    def test_stable(self) -> None:
        assert derive_seed(0, "tsne/clean-av/11") == derive_seed(0, "tsne/clean-av/11")

    def test_stage_and_index_matter(self) -> None:
        seeds = {derive_seed(0, "tsne"), derive_seed(0, "probe"), derive_seed(1, "tsne"), derive_seed(0, "tsne", 1)}
        assert len(seeds) == 4

    def test_range(self) -> None:
        assert all(0 <= derive_seed(s, "synth") < 2**63 for s in range(20))


class TestResolveConfig:
    """Tests for defaults < config file < flags."""

    def test_flags_override_file(self, tmp_path: Path) -> None:
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"seed": 5, "per_class": 40, "tsne": {"perplexity": 7}}))
        args = build_parser().parse_args(
            ["tsne", "-c", str(config), "--seed", "9", "--tsne.theta", "0.25"]
        )
        cfg = resolve_config(args)
        assert cfg.seed == 9
        assert cfg.per_class == 40
        assert cfg.tsne.perplexity == 7
        assert cfg.tsne.theta == 0.25

    def test_aliases(self) -> None:
        args = build_parser().parse_args(["tsne", "--restarts", "2", "--min-trust", "0.9", "--trust-k", "8"])
        cfg = resolve_config(args)
        assert (cfg.tsne.restarts, cfg.tsne.min_trust, cfg.tsne.trust_k) == (2, 0.9, 8)

    def test_optional_flag_accepts_none(self) -> None:
        args = build_parser().parse_args(["probe-sweep", "--probe.input_dim", "none", "--probe.standardize", "yes"])
        cfg = resolve_config(args)
        assert cfg.probe.input_dim is None
        assert cfg.probe.standardize is True

    def test_unknown_key(self, tmp_path: Path) -> None:
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"sed": 5}))
        with pytest.raises(ConfigError, match="sed"):
            resolve_config(build_parser().parse_args(["report", "-c", str(config)]))

    def test_invalid_value(self) -> None:
        with pytest.raises(ConfigError):
            resolve_config(build_parser().parse_args(["tsne", "--tsne.metric", "manhattan"]))

    def test_out_dir_from_environment(self, monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
        monkeypatch.setenv("VSCOPE_OUT", str(tmp_path))
        assert RunConfig().out_dir == tmp_path
        assert RunConfig(out="elsewhere").out_dir == Path("elsewhere")


class TestRunJobs:
    """Tests for per-job failure handling."""

    def test_failed_job_leaves_marker(self, tmp_path: Path) -> None:
        cfg = RunConfig(out=str(tmp_path))
        manifest = RunManifest("probe-sweep", cfg)

        def work(job: tuple[str, int]) -> list[Path]:
            if job[1] == 1:
                raise ClassTooSmall("ER", 1)
            path = tmp_path / f"ok_{job[1]}.txt"
            path.write_text("ok")
            return [path]

        status = _run_jobs(cfg, manifest, [("clean-av", 0), ("clean-av", 1)], work, lambda j: j)
        assert status == EXIT_JOB_FAILED
        assert manifest.failed == ["clean-av/1"]
        assert "ClassTooSmall" in (tmp_path / "FAILED_clean-av_1.txt").read_text()
        assert (tmp_path / "ok_0.txt").exists()

    def test_worker_failure_reaches_parent_with_two_jobs(self, tmp_path: Path) -> None:
        rng = np.random.default_rng(0)
        healthy = make_dataset(rng.standard_normal((30, 4)), ["P"] * 15 + ["K"] * 15)
        rare = make_dataset(rng.standard_normal((32, 4)), ["P"] * 15 + ["K"] * 15 + ["ER"] * 2, layer=1)
        probe_cfg = ProbeConfig(hidden_units=4, max_epochs=2, batch_size=8)
        cfg = RunConfig(out=str(tmp_path), jobs=2)
        manifest = RunManifest("probe-sweep", cfg)
        jobs = [
            _ProbeJob("clean-av", 0, healthy, probe_cfg, tmp_path),
            _ProbeJob("clean-av", 1, rare, probe_cfg, tmp_path),
        ]

        status = _run_jobs(cfg, manifest, jobs, _run_probe_job, lambda j: (j.condition, j.layer), lambda r: r[1])

        assert status == EXIT_JOB_FAILED
        assert manifest.failed == ["clean-av/1"]
        marker = (tmp_path / "FAILED_clean-av_1.txt").read_text()
        assert marker == "ClassTooSmall: viseme 'ER' has 2 record(s); need at least 3\n"
        assert (tmp_path / "eval_report_clean-av_0.json").exists()

    def test_all_jobs_succeed(self, tmp_path: Path) -> None:
        cfg = RunConfig(out=str(tmp_path))
        manifest = RunManifest("tsne", cfg)
        assert _run_jobs(cfg, manifest, [], lambda j: [], lambda j: j) == EXIT_OK


# =============================================================================
# CLI Tests
# =============================================================================


class TestSynthAndFeatures:
    """CLI tests for synth, validate and build-features."""

    def test_corpus_written(self, workdir: Path) -> None:
        assert (workdir / "manifest.json").exists()
        assert (workdir / "alignment.csv").exists()
        assert json.loads((workdir / "synth_spec.json").read_text())["tokens_per_class"] == 12
        assert len(list((workdir / "emb").glob("*.emb1"))) > 0

    def test_feature_cache(self, workdir: Path) -> None:
        df = pd.read_csv(workdir / "features.csv", keep_default_na=False)
        assert set(df["condition"]) == {"clean-av", "video-only"}
        assert set(df["layer"]) == {0, 1}
        assert len(df) == 14 * 12 * 2 * 2

    def test_run_manifest(self, workdir: Path) -> None:
        manifest = json.loads((workdir / "run_manifest_build-features.json").read_text())
        assert manifest["subcommand"] == "build-features"
        assert manifest["outputs"] == ["features.csv", "features.skipped.csv"]
        assert manifest["skipped"] == {"EmptyCoverage": 0}
        assert len(manifest["inputs"]) == 2

    def test_validate_ok(self, workdir: Path, tmp_path: Path) -> None:
        result = vscope(
            "validate",
            "--manifest", str(workdir / "manifest.json"),
            "--alignment", str(workdir / "alignment.csv"),
            "--out", str(tmp_path),
        )
        assert result.returncode == 0, f"CLI failed: {result.stderr}"
        assert result.stdout.startswith("OK:")

    def test_validate_unmapped_phoneme(self, workdir: Path, tmp_path: Path) -> None:
        alignment = tmp_path / "alignment.csv"
        alignment.write_text("utterance_id,phoneme,start_s,end_s\nsynth00000,q,0.0,0.1\n")
        result = vscope(
            "validate",
            "--manifest", str(workdir / "manifest.json"),
            "--alignment", str(alignment),
            "--out", str(tmp_path),
        )
        assert result.returncode == 2
        assert str(alignment) in result.stderr
        assert "'q'" in result.stderr

    def test_missing_input_file(self, tmp_path: Path) -> None:
        code = main(["build-features", "--manifest", str(tmp_path / "nope.json"),
                     "--alignment", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
        assert code == 2

    def test_out_from_environment(self, tmp_path: Path) -> None:
        env = {**os.environ, "VSCOPE_OUT": str(tmp_path / "env_out")}
        result = vscope("synth", *SYNTH_FLAGS, "--synth.tokens_per_class", "3", env=env)
        assert result.returncode == 0, f"CLI failed: {result.stderr}"
        assert (tmp_path / "env_out" / "manifest.json").exists()


class TestTsneCli:
    """CLI tests for the tsne subcommand."""

    def test_outputs(self, workdir: Path, tmp_path: Path) -> None:
        out = tmp_path / "tsne"
        result = vscope(
            "tsne", "--features", str(workdir / "features.csv"), "--out", str(out),
            "--conditions", "clean-av", "--layers", "1", *FAST_TSNE_FLAGS,
        )
        assert result.returncode == 0, f"CLI failed: {result.stderr}"

        job_dir = out / "tsne_clean-av_1"
        coords = pd.read_csv(job_dir / "tsne_coords.csv", keep_default_na=False)
        assert len(coords) == 14 * 12
        assert list(coords.columns) == [
            "record_index", "utterance_id", "condition", "layer", "viseme", "phoneme", "x", "y",
        ]
        quality = json.loads((job_dir / "tsne_quality.json").read_text())
        assert "trustworthiness_k5" in quality
        assert quality["n_points"] == 14 * 12
        svg = (job_dir / "scatter_clean-av_1.svg").read_text()
        assert svg.count('class="glyph"') == len(pd.read_csv(job_dir / "scatter_clean-av_1.csv"))

    def test_same_seed_same_bytes(self, workdir: Path, tmp_path: Path) -> None:
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            result = vscope(
                "tsne", "--features", str(workdir / "features.csv"), "--out", str(out),
                "--conditions", "video-only", "--layers", "0", "--seed", "3", *FAST_TSNE_FLAGS,
            )
            assert result.returncode == 0, f"CLI failed: {result.stderr}"
            job_dir = out / "tsne_video-only_0"
            outputs.append(
                ((job_dir / "tsne_coords.csv").read_bytes(), (job_dir / "scatter_video-only_0.svg").read_bytes())
            )
        assert outputs[0] == outputs[1]

    def test_perplexity_too_large_for_sample(self, workdir: Path, tmp_path: Path) -> None:
        # 14 classes x 6 tokens = 84 points, and 3 * 30 >= 84.
        result = vscope(
            "tsne", "--features", str(workdir / "features.csv"), "--out", str(tmp_path),
            "--conditions", "clean-av", "--layers", "0", "--per-class", "6",
        )
        assert result.returncode == 2
        assert "perplexity" in result.stderr
        assert not (tmp_path / "tsne_clean-av_0").exists()


class TestProbeAndReportCli:
    """CLI tests for probe-sweep and report."""

    @pytest.fixture(scope="class")
    def swept(self, workdir: Path) -> Path:
        result = vscope("probe-sweep", "--out", str(workdir), *FAST_PROBE_FLAGS, "--jobs", "2")
        assert result.returncode == 0, f"CLI failed: {result.stderr}"
        return workdir

    def test_probe_outputs(self, swept: Path) -> None:
        probe_dir = swept / "probe"
        for condition in ("clean-av", "video-only"):
            for layer in (0, 1):
                report = json.loads((probe_dir / f"eval_report_{condition}_{layer}.json").read_text())
                assert report["condition"] == condition
                assert len(report["per_class"]) == 14
                log = pd.read_csv(probe_dir / f"train_log_{condition}_{layer}.csv")
                assert len(log) == 5
                assert (probe_dir / f"probe_{condition}_{layer}.model").exists()

    def test_comparisons(self, swept: Path) -> None:
        probe_dir = swept / "probe"
        delta = pd.read_csv(probe_dir / "f1_delta.csv", keep_default_na=False)
        assert set(delta["condition"]) == {"video-only"}
        assert set(delta["baseline"]) == {"clean-av"}
        assert len(delta) == 14 * 2
        summary = json.loads((probe_dir / "f1_summary.json").read_text())
        assert summary["baseline"] == "clean-av"
        improvement = summary["conditions"]["video-only"]["improvement"]
        assert improvement["layer"] == 1
        assert improvement["vowel"]["total"] == 7
        assert improvement["consonant"]["total"] == 6

    def test_f1_table_and_curves(self, swept: Path) -> None:
        probe_dir = swept / "probe"
        table = pd.read_csv(probe_dir / "f1_by_layer.csv", keep_default_na=False)
        assert len(table) == 2 * 2 * 14
        svg = (probe_dir / "line-f1-F-ER_all_all.svg").read_text()
        assert svg.count('class="curve"') == 4
        assert (probe_dir / "line-accuracy_all_all.svg").exists()

    def test_report(self, swept: Path) -> None:
        result = vscope("report", "--out", str(swept))
        assert result.returncode == 0, f"CLI failed: {result.stderr}"
        figures = swept / "figures"
        hist = pd.read_csv(figures / "histogram_all_all.csv", keep_default_na=False)
        assert set(hist["count"]) == {12}
        assert (figures / "histogram_clean-av_1.svg").exists()
        assert (figures / "line-accuracy_all_all.svg").exists()
        manifest = json.loads((swept / "run_manifest_report.json").read_text())
        assert "figures/histogram_all_all.svg" in manifest["outputs"]

    def test_same_seed_same_bytes(self, swept: Path, tmp_path: Path) -> None:
        contents = []
        for name in ("a", "b"):
            out = tmp_path / name
            result = vscope(
                "probe-sweep", "--features", str(swept / "features.csv"), "--out", str(out),
                "--conditions", "clean-av", "video-only", "--layers", "0", "1",
                "--seed", "5", "--jobs", "1", *FAST_PROBE_FLAGS,
            )
            assert result.returncode == 0, f"CLI failed: {result.stderr}"
            probe_dir = out / "probe"
            contents.append({p.name: p.read_bytes() for p in sorted(probe_dir.iterdir())})
        assert "f1_by_layer.csv" in contents[0]
        assert "probe_video-only_1.model" in contents[0]
        assert contents[0].keys() == contents[1].keys()
        for name in contents[0]:
            assert contents[0][name] == contents[1][name], name

    def test_single_layer_warning(self, swept: Path, tmp_path: Path) -> None:
        result = vscope(
            "probe-sweep", "--features", str(swept / "features.csv"), "--out", str(tmp_path),
            "--layers", "1", *FAST_PROBE_FLAGS,
        )
        assert result.returncode == 0, f"CLI failed: {result.stderr}"
        assert "SparseLayersWarning" in result.stderr

"""Command-line pipeline: synth, validate, build-features, tsne, probe-sweep, report.

Usage:
    python -m viseme_scope.cli synth --out work --layers 0 6 11
    python -m viseme_scope.cli build-features --manifest work/manifest.json --alignment work/alignment.csv --out work
    python -m viseme_scope.cli tsne --out work --layers 11 --conditions clean-av --tsne.restarts 1
    python -m viseme_scope.cli probe-sweep --out work --jobs 4
    python -m viseme_scope.cli report --out work

Every subcommand writes ``run_manifest_<subcommand>.json`` next to its outputs.
All randomness derives from ``--seed`` through named sub-seeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
import types
import typing
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import pandas as pd

from viseme_scope import __version__
from viseme_scope.alignment import load_viseme_map, map_to_viseme, read_alignment
from viseme_scope.alignment_converter import load_config
from viseme_scope.errors import ConfigError, MissingUtterance, VisemeScopeError
from viseme_scope.features import (
    FeatureDataset,
    balanced_subsample,
    build_dataset,
    load_sequences,
    read_corpus_manifest,
    read_dataset_cache,
    read_embedding_container,
    skipped_cache_path,
    write_dataset_cache,
)
from viseme_scope.metrics import (
    EvalReport,
    average_delta,
    condition_delta,
    evaluate_predictions,
    improvement_summary,
    reports_to_frame,
)
from viseme_scope.probe import ProbeConfig, run_probe, save_probe
from viseme_scope.report import PlotSpec, emit_histogram, emit_layer_curves, emit_scatter, load_plot_spec
from viseme_scope.synthetic import SyntheticSpec, write_synthetic_corpus
from viseme_scope.tsne import TsneConfig, run_tsne

logger = logging.getLogger(__name__)

OUT_ENV = "VSCOPE_OUT"
FEATURES_FILE = "features.csv"
COORD_COLUMNS = ["record_index", "utterance_id", "condition", "layer", "viseme", "phoneme", "x", "y"]
DEFAULT_CURVE_VISEMES = ("F", "ER")

EXIT_OK = 0
EXIT_JOB_FAILED = 1
EXIT_ERROR = 2


@dataclass(frozen=True)
class RunConfig:
    manifest: str | None = None
    alignment: str | None = None
    viseme_map: str = "lee"
    # Empty selects every layer / condition in the data.
    layers: tuple[int, ...] = ()
    conditions: tuple[str, ...] = ()
    per_class: int = 500
    seed: int = 0
    out: str | None = None
    features: str | None = None
    jobs: int = 1
    plot_spec: str | None = None
    curve_visemes: tuple[str, ...] = DEFAULT_CURVE_VISEMES
    tsne: TsneConfig = field(default_factory=TsneConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    @property
    def out_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or "out")

    @property
    def features_path(self) -> Path:
        return Path(self.features) if self.features else self.out_dir / FEATURES_FILE

    def validate(self) -> None:
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.per_class < 1:
            raise ConfigError("per_class must be >= 1")
        for name in ("manifest", "alignment", "plot_spec"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{name} file {path} does not exist")
        self.tsne.validate()
        self.probe.validate()

    def selected(self, dataset: FeatureDataset) -> list[tuple[str, int]]:
        """(condition, layer) jobs, in configured order, that the dataset covers."""
        conditions = list(self.conditions) or dataset.conditions
        layers = list(self.layers) or dataset.layers
        if not layers:
            raise ConfigError("no layers to process")
        present = {(r.condition, r.layer) for r in dataset.records}
        missing = [(c, l) for c in conditions for l in layers if (c, l) not in present]
        if missing:
            raise ConfigError(f"feature cache has no records for {missing}")
        return [(c, l) for c in conditions for l in layers]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        data = dict(data)
        if "tsne" in data:
            data["tsne"] = TsneConfig.from_dict(data["tsne"])
        if "probe" in data:
            data["probe"] = ProbeConfig.from_dict(data["probe"])
        for name in ("layers", "conditions", "curve_visemes"):
            if name in data:
                data[name] = tuple(data[name])
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        for name in ("layers", "conditions", "curve_visemes"):
            out[name] = list(out[name])
        return out


def derive_seed(master: int, stage: str, index: int = 0) -> int:
    """Stage sub-seed: first 8 bytes of BLAKE2b over (master, stage, index)."""
    digest = hashlib.blake2b(f"{master}\x1f{stage}\x1f{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % (2**63)


# =============================================================================
# Run manifest
# =============================================================================


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Collects what a subcommand read and wrote, then writes it atomically."""

    def __init__(self, subcommand: str, config: RunConfig) -> None:
        self.subcommand = subcommand
        self.config = config
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.stages: dict[str, float] = {}
        self.skipped: dict[str, int] = {}
        self.failed: list[str] = []

    def input(self, path: str | Path) -> None:
        path = Path(path)
        if path.is_file():
            self.inputs[str(path)] = _sha256(path)

    def output(self, paths: Path | Iterable[Path]) -> None:
        self.outputs.extend([paths] if isinstance(paths, Path) else paths)

    def stage(self, name: str) -> _Stage:
        return _Stage(self, name)

    def write(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        target = out_dir / f"run_manifest_{self.subcommand}.json"
        outputs = sorted({str(p.relative_to(out_dir)) if p.is_relative_to(out_dir) else str(p) for p in self.outputs})
        body = {
            "subcommand": self.subcommand,
            "version": __version__,
            "config": self.config.to_dict(),
            "inputs": self.inputs,
            "skipped": self.skipped,
            "failed": self.failed,
            "stage_seconds": self.stages,
            "outputs": outputs,
        }
        fd, tmp = tempfile.mkstemp(prefix=".run_manifest_", suffix=".json", dir=out_dir)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(body, f, indent=2, sort_keys=True)
                f.write("\n")
            os.replace(tmp, target)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        return target


class _Stage:
    def __init__(self, manifest: RunManifest, name: str) -> None:
        self.manifest = manifest
        self.name = name

    def __enter__(self) -> None:
        self.start = time.perf_counter()
        logger.info("stage %s", self.name)

    def __exit__(self, *exc: object) -> None:
        self.manifest.stages[self.name] = round(time.perf_counter() - self.start, 3)


def _with_path(path: str | Path, load: Callable[[Any], Any]) -> Any:
    """Call ``load(path)``, tagging toolkit errors with the file they came from."""
    try:
        return load(path)
    except VisemeScopeError as exc:
        if not hasattr(exc, "path"):
            exc.path = str(path)  # type: ignore[attr-defined]
        raise


def _write_json(path: Path, data: Any) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _plot_spec(cfg: RunConfig) -> PlotSpec:
    return _with_path(cfg.plot_spec, load_plot_spec) if cfg.plot_spec else PlotSpec()


def _load_features(cfg: RunConfig, manifest: RunManifest) -> FeatureDataset:
    path = cfg.features_path
    if not path.is_file():
        raise ConfigError(f"feature cache {path} not found; run build-features first")
    manifest.input(path)
    manifest.input(skipped_cache_path(path))
    return read_dataset_cache(path)


# =============================================================================
# Subcommands
# =============================================================================


def cmd_synth(cfg: RunConfig, manifest: RunManifest, spec: SyntheticSpec) -> int:
    if cfg.layers:
        spec = replace(spec, layers=tuple(cfg.layers))
    with manifest.stage("synth"):
        manifest_path, alignment_path = write_synthetic_corpus(
            cfg.out_dir, spec, derive_seed(cfg.seed, "synth")
        )
    manifest.output([manifest_path, alignment_path, *sorted((cfg.out_dir / "emb").glob("*.emb1"))])
    _write_json(cfg.out_dir / "synth_spec.json", spec.to_dict())
    manifest.output(cfg.out_dir / "synth_spec.json")
    print(f"Synthesized corpus -> {manifest_path}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, manifest: RunManifest) -> int:
    if cfg.manifest is None or cfg.alignment is None:
        raise ConfigError("validate needs --manifest and --alignment")
    manifest.input(cfg.manifest)
    manifest.input(cfg.alignment)
    with manifest.stage("containers"):
        entries = _with_path(cfg.manifest, read_corpus_manifest)
        for entry in entries:
            if not entry.path.is_file():
                raise MissingUtterance(entry.utterance_id, entry.condition, entry.layer)

            def check(path: Path, entry: Any = entry) -> None:
                with open(path, "rb") as f:
                    read_embedding_container(f, entry)

            _with_path(entry.path, check)
    with manifest.stage("alignment"):
        segments = _with_path(cfg.alignment, read_alignment)
        viseme_map = load_viseme_map(cfg.viseme_map)
        for segment in segments:
            _with_path(cfg.alignment, lambda _: map_to_viseme(segment.phoneme, viseme_map))
        keys = {entry.key for entry in entries}
        pairs = {(c, l) for _, c, l in keys}
        for utterance_id in dict.fromkeys(s.utterance_id for s in segments):
            for condition, layer in sorted(pairs):
                if (utterance_id, condition, layer) not in keys:
                    raise MissingUtterance(utterance_id, condition, layer)
    print(f"OK: {len(entries)} container(s), {len(segments)} segment(s), viseme map {viseme_map.name!r}")
    return EXIT_OK


def cmd_build_features(cfg: RunConfig, manifest: RunManifest) -> int:
    if cfg.manifest is None or cfg.alignment is None:
        raise ConfigError("build-features needs --manifest and --alignment")
    manifest.input(cfg.manifest)
    manifest.input(cfg.alignment)
    with manifest.stage("load"):
        entries = _with_path(cfg.manifest, read_corpus_manifest)
        entries = [
            e for e in entries
            if (not cfg.conditions or e.condition in cfg.conditions)
            and (not cfg.layers or e.layer in cfg.layers)
        ]
        sequences = load_sequences(entries)
        segments = _with_path(cfg.alignment, read_alignment)
        viseme_map = load_viseme_map(cfg.viseme_map)
    with manifest.stage("pool"):
        dataset = build_dataset(
            sequences,
            segments,
            viseme_map,
            conditions=list(cfg.conditions) or None,
            layers=list(cfg.layers) or None,
            jobs=cfg.jobs,
        )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest.output(write_dataset_cache(dataset, cfg.features_path))
    manifest.skipped["EmptyCoverage"] = len(dataset.skipped)
    print(
        f"Built {len(dataset)} feature record(s) ({len(dataset.skipped)} skipped) -> {cfg.features_path}"
    )
    return EXIT_OK


@dataclass(frozen=True, eq=False)
class _TsneJob:
    condition: str
    layer: int
    dataset: FeatureDataset
    config: TsneConfig
    plot_spec: PlotSpec
    out_dir: Path


def _run_tsne_job(job: _TsneJob) -> list[Path]:
    ds = job.dataset
    result = run_tsne(ds.matrix(), ds.labels(), job.config)
    job.out_dir.mkdir(parents=True, exist_ok=True)
    coords = pd.DataFrame(
        [
            (i, r.utterance_id, r.condition, r.layer, r.viseme, r.phoneme, x, y)
            for i, (r, (x, y)) in enumerate(zip(ds.records, result.coords))
        ],
        columns=COORD_COLUMNS,
    )
    coords_path = job.out_dir / "tsne_coords.csv"
    coords.to_csv(coords_path, index=False, lineterminator="\n")
    quality = result.quality_dict(job.config)
    quality["kl_trace"] = [[it, kl] for it, kl in result.kl_trace]
    quality["n_points"] = len(ds)
    quality_path = _write_json(job.out_dir / "tsne_quality.json", quality)
    plot = emit_scatter(
        result.coords,
        ds.labels(),
        job.plot_spec,
        phonemes=ds.phonemes(),
        condition=job.condition,
        layer=job.layer,
    )
    return [coords_path, quality_path, *plot.write(job.out_dir)]


def cmd_tsne(cfg: RunConfig, manifest: RunManifest) -> int:
    dataset = _load_features(cfg, manifest)
    spec = _plot_spec(cfg)
    jobs: list[_TsneJob] = []
    for condition, layer in cfg.selected(dataset):
        sample = balanced_subsample(
            dataset.select(condition, layer),
            cfg.per_class,
            derive_seed(cfg.seed, f"subsample/{condition}/{layer}"),
        )
        tsne_cfg = replace(cfg.tsne, seed=derive_seed(cfg.seed, f"tsne/{condition}/{layer}"))
        # Fail the whole run before any optimization when N is too small.
        tsne_cfg.validate(n_samples=len(sample))
        jobs.append(
            _TsneJob(condition, layer, sample, tsne_cfg, spec, cfg.out_dir / f"tsne_{condition}_{layer}")
        )
    with manifest.stage("tsne"):
        status = _run_jobs(cfg, manifest, jobs, _run_tsne_job, lambda j: (j.condition, j.layer))
    print(f"t-SNE: {len(jobs) - len(manifest.failed)}/{len(jobs)} embedding(s) -> {cfg.out_dir}")
    return status


@dataclass(frozen=True, eq=False)
class _ProbeJob:
    condition: str
    layer: int
    dataset: FeatureDataset
    config: ProbeConfig
    out_dir: Path


def _run_probe_job(job: _ProbeJob) -> tuple[EvalReport, list[Path]]:
    run = run_probe(job.dataset, job.config)
    report = evaluate_predictions(
        run.test_true, run.test_pred, run.model.class_index, job.condition, job.layer
    )
    stem = f"{job.condition}_{job.layer}"
    report_path = _write_json(job.out_dir / f"eval_report_{stem}.json", report.to_dict())
    log_path = job.out_dir / f"train_log_{stem}.csv"
    run.trace.to_frame().to_csv(log_path, index=False, lineterminator="\n")
    model_path = job.out_dir / f"probe_{stem}.model"
    save_probe(model_path, run.model, job.config)
    return report, [report_path, log_path, model_path]


def _emit_curves(reports: Sequence[EvalReport], cfg: RunConfig, out_dir: Path) -> list[Path]:
    spec = _plot_spec(cfg)
    written = emit_layer_curves(reports, "accuracy", spec).write(out_dir)
    present = {v for r in reports for v in r.per_class}
    visemes = [v for v in cfg.curve_visemes if v in present]
    if visemes:
        written += emit_layer_curves(reports, "f1", spec, visemes=visemes).write(out_dir)
    return written


def _comparisons(reports: Sequence[EvalReport], out_dir: Path) -> list[Path]:
    """f1_delta.csv and f1_summary.json: every condition against the first one."""
    conditions = list(dict.fromkeys(r.condition for r in reports))
    by_condition = {c: {r.layer: r for r in reports if r.condition == c} for c in conditions}
    baseline = conditions[0]
    rows = []
    summary: dict[str, Any] = {"baseline": baseline, "conditions": {}}
    for condition in conditions[1:]:
        shared = sorted(set(by_condition[baseline]) & set(by_condition[condition]))
        for layer in shared:
            delta = condition_delta(by_condition[baseline][layer], by_condition[condition][layer])
            rows.extend((condition, baseline, layer, v, d) for v, d in delta.items())
        entry: dict[str, Any] = {
            "average_delta": average_delta(by_condition[baseline], by_condition[condition])
        }
        if shared:
            last = shared[-1]
            entry["improvement"] = {
                "layer": last,
                **improvement_summary(by_condition[baseline][last], by_condition[condition][last]),
            }
        summary["conditions"][condition] = entry
    delta_path = out_dir / "f1_delta.csv"
    pd.DataFrame(rows, columns=["condition", "baseline", "layer", "viseme", "delta_f1"]).to_csv(
        delta_path, index=False, lineterminator="\n"
    )
    return [delta_path, _write_json(out_dir / "f1_summary.json", summary)]


def cmd_probe_sweep(cfg: RunConfig, manifest: RunManifest) -> int:
    dataset = _load_features(cfg, manifest)
    out_dir = cfg.out_dir / "probe"
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        _ProbeJob(
            condition,
            layer,
            dataset.select(condition, layer),
            replace(cfg.probe, seed=derive_seed(cfg.seed, f"probe/{condition}/{layer}")),
            out_dir,
        )
        for condition, layer in cfg.selected(dataset)
    ]
    reports: list[EvalReport] = []

    def collect(result: tuple[EvalReport, list[Path]]) -> list[Path]:
        reports.append(result[0])
        return result[1]

    with manifest.stage("probe"):
        status = _run_jobs(cfg, manifest, jobs, _run_probe_job, lambda j: (j.condition, j.layer), collect)
    if reports:
        order = {(j.condition, j.layer): i for i, j in enumerate(jobs)}
        reports.sort(key=lambda r: order[(r.condition, r.layer)])
        table_path = out_dir / "f1_by_layer.csv"
        reports_to_frame(reports).to_csv(table_path, index=False, lineterminator="\n")
        manifest.output(table_path)
        with manifest.stage("curves"):
            manifest.output(_comparisons(reports, out_dir))
            manifest.output(_emit_curves(reports, cfg, out_dir))
    print(f"Probe sweep: {len(reports)}/{len(jobs)} probe(s) -> {out_dir}")
    return status


def cmd_report(cfg: RunConfig, manifest: RunManifest) -> int:
    dataset = _load_features(cfg, manifest)
    spec = _plot_spec(cfg)
    out_dir = cfg.out_dir / "figures"
    with manifest.stage("histograms"):
        manifest.output(emit_histogram(dataset.select(*_first_pair(dataset)), spec).write(out_dir))
        for condition, layer in cfg.selected(dataset):
            plot = emit_histogram(dataset.select(condition, layer), spec, condition=condition, layer=layer)
            manifest.output(plot.write(out_dir))
    report_paths = sorted((cfg.out_dir / "probe").glob("eval_report_*.json"))
    if report_paths:
        reports = []
        for path in report_paths:
            manifest.input(path)
            reports.append(EvalReport.from_dict(json.loads(path.read_text(encoding="utf-8"))))
        reports.sort(key=lambda r: (r.condition, r.layer))
        with manifest.stage("curves"):
            manifest.output(_emit_curves(reports, cfg, out_dir))
    print(f"Report: {len(manifest.outputs)} file(s) -> {out_dir}")
    return EXIT_OK


def _first_pair(dataset: FeatureDataset) -> tuple[str | None, int | None]:
    """Token counts do not depend on condition or layer; any one pair gives them."""
    if not dataset.records:
        return None, None
    first = dataset.records[0]
    return first.condition, first.layer


def _run_jobs(
    cfg: RunConfig,
    manifest: RunManifest,
    jobs: Sequence[Any],
    work: Callable[[Any], Any],
    key: Callable[[Any], tuple[str, int]],
    collect: Callable[[Any], list[Path]] = lambda paths: paths,
) -> int:
    """Run per-(condition, layer) jobs; failures leave a FAILED_<condition>_<layer>.txt marker."""
    status = EXIT_OK

    def handle(job: Any, run: Callable[[], Any]) -> None:
        nonlocal status
        condition, layer = key(job)
        try:
            manifest.output(collect(run()))
        except (VisemeScopeError, BrokenProcessPool) as exc:
            logger.error("job %s/%s failed: %s", condition, layer, exc)
            marker = cfg.out_dir / f"FAILED_{condition}_{layer}.txt"
            marker.write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
            manifest.output(marker)
            manifest.failed.append(f"{condition}/{layer}")
            status = EXIT_JOB_FAILED

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.jobs == 1:
        for job in jobs:
            handle(job, lambda job=job: work(job))
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(work, job) for job in jobs]
            for job, future in zip(jobs, futures):
                handle(job, future.result)
    return status


# =============================================================================
# Argument parsing
# =============================================================================


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _scalar_parser(hint: Any) -> Callable[[str], Any] | None:
    """Parser for int/float/str/bool fields, optionally ``| None``; None for other types."""
    args = typing.get_args(hint)
    if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union:
        inner = [a for a in args if a is not type(None)]
        base = _scalar_parser(inner[0]) if len(inner) == 1 else None
        if base is None:
            return None
        return lambda text: None if text.strip().lower() in {"none", "null"} else base(text)
    if hint is bool:
        return _parse_bool
    if hint in (int, float, str):
        return hint
    return None


def add_dataclass_flags(
    parser: argparse.ArgumentParser,
    prefix: str,
    cls: type,
    aliases: dict[str, Sequence[str]] | None = None,
) -> None:
    """Add a ``--<prefix>.<field>`` flag for every scalar field of a dataclass."""
    hints = typing.get_type_hints(cls)
    group = parser.add_argument_group(f"{prefix} options")
    for f in fields(cls):
        parse = _scalar_parser(hints[f.name])
        if parse is None:
            continue
        group.add_argument(
            f"--{prefix}.{f.name}",
            *(aliases or {}).get(f.name, ()),
            dest=f"{prefix}.{f.name}",
            type=parse,
            default=argparse.SUPPRESS,
            metavar=hints[f.name].__name__.upper() if isinstance(hints[f.name], type) else "VALUE",
            help=f"default: {f.default}",
        )


def _dotted(args: argparse.Namespace, prefix: str) -> dict[str, Any]:
    return {
        key.split(".", 1)[1]: value
        for key, value in vars(args).items()
        if key.startswith(prefix + ".")
    }


def _parse_condition(text: str) -> tuple[str, float]:
    name, sep, scale = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME=SCALE, got {text!r}")
    return name.strip(), float(scale)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vscope",
        description="Viseme-level analysis of audio-visual speech embeddings",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("-c", "--config", help="Run config file (JSON or Python)")
        p.add_argument("-o", "--out", default=argparse.SUPPRESS, help=f"Output directory (default: ${OUT_ENV} or ./out)")
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Master seed")
        p.add_argument("--layers", type=int, nargs="+", default=argparse.SUPPRESS, help="Layers to process")
        p.add_argument("--conditions", nargs="+", default=argparse.SUPPRESS, help="Conditions to process")
        p.add_argument("--viseme-map", dest="viseme_map", default=argparse.SUPPRESS, help="Builtin map name or map file")
        p.add_argument("--features", default=argparse.SUPPRESS, help="Feature cache CSV (default: <out>/features.csv)")
        p.add_argument("-j", "--jobs", type=int, default=argparse.SUPPRESS, help="Parallel (condition, layer) jobs")
        p.add_argument("--plot-spec", dest="plot_spec", default=argparse.SUPPRESS, help="PlotSpec JSON override")
        p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")

    def inputs(p: argparse.ArgumentParser) -> None:
        p.add_argument("--manifest", default=argparse.SUPPRESS, help="Corpus manifest JSON")
        p.add_argument("--alignment", default=argparse.SUPPRESS, help="Alignment CSV")

    p = sub.add_parser("synth", help="Write a synthetic corpus")
    common(p)
    p.add_argument("--spec", help="SyntheticSpec JSON file")
    p.add_argument("--condition", dest="synth_conditions", type=_parse_condition, action="append",
                   help="Condition and separation scale as NAME=SCALE (repeatable)")
    add_dataclass_flags(p, "synth", SyntheticSpec)

    p = sub.add_parser("validate", help="Check manifest, containers, alignment and viseme map")
    common(p)
    inputs(p)

    p = sub.add_parser("build-features", help="Pool aligned frames into the feature cache")
    common(p)
    inputs(p)

    p = sub.add_parser("tsne", help="t-SNE embeddings and scatter plots per condition and layer")
    common(p)
    p.add_argument("--per-class", dest="per_class", type=int, default=argparse.SUPPRESS, help="Balanced subsample size per viseme")
    add_dataclass_flags(p, "tsne", TsneConfig, {"restarts": ["--restarts"], "min_trust": ["--min-trust"], "trust_k": ["--trust-k"]})

    p = sub.add_parser("probe-sweep", help="Train and evaluate one probe per condition and layer")
    common(p)
    p.add_argument("--curve-visemes", dest="curve_visemes", nargs="+", default=argparse.SUPPRESS, help="Visemes for the F1 curve plot")
    add_dataclass_flags(p, "probe", ProbeConfig)

    p = sub.add_parser("report", help="Histograms from the feature cache, curves from eval reports")
    common(p)
    p.add_argument("--curve-visemes", dest="curve_visemes", nargs="+", default=argparse.SUPPRESS, help="Visemes for the F1 curve plot")
    return parser


_TOP_LEVEL = {f.name for f in fields(RunConfig)} - {"tsne", "probe"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    data: dict[str, Any] = load_config(args.config) if getattr(args, "config", None) else {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {args.config} must be an object")
    unknown = set(data) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)}")
    for name in _TOP_LEVEL:
        if name in vars(args):
            data[name] = getattr(args, name)
    for prefix in ("tsne", "probe"):
        overrides = _dotted(args, prefix)
        if overrides:
            data[prefix] = {**data.get(prefix, {}), **overrides}
    try:
        cfg = RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def _synthetic_spec(args: argparse.Namespace) -> SyntheticSpec:
    data: dict[str, Any] = {}
    if args.spec:
        with open(args.spec, encoding="utf-8") as f:
            data = json.load(f)
    data.update(_dotted(args, "synth"))
    if args.synth_conditions:
        data["conditions"] = dict(args.synth_conditions)
    try:
        spec = SyntheticSpec.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    spec.validate()
    return spec


def main(argv: Sequence[str] | None = None) -> int:
    """CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)

    try:
        cfg = resolve_config(args)
        manifest = RunManifest(args.command, cfg)
        if args.config:
            manifest.input(args.config)
        if args.command == "synth":
            status = cmd_synth(cfg, manifest, _synthetic_spec(args))
        elif args.command == "validate":
            status = cmd_validate(cfg, manifest)
        elif args.command == "build-features":
            status = cmd_build_features(cfg, manifest)
        elif args.command == "tsne":
            status = cmd_tsne(cfg, manifest)
        elif args.command == "probe-sweep":
            status = cmd_probe_sweep(cfg, manifest)
        else:
            status = cmd_report(cfg, manifest)
        manifest.write(cfg.out_dir)
    except VisemeScopeError as exc:
        where = getattr(exc, "path", None)
        print(f"error: {where}: {exc}" if where else f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return status


if __name__ == "__main__":
    sys.exit(main())

"""Alignment CSV converter.

Converts per-phone alignment exports (for example a forced aligner's CSV
export with ``Begin,End,Label,Type,Speaker`` columns) to the Alignment CSV
format ``utterance_id,phoneme,start_s,end_s`` using user-defined column
mappings.
"""

from __future__ import annotations

import argparse
import importlib.util
import io
import json
import re
import sys
from pathlib import Path
from typing import Any

import pandas as pd

from viseme_scope.alignment import (
    ALIGNMENT_COLUMNS,
    SILENCE,
    parse_alignment_csv,
    write_alignment_csv,
)
from viseme_scope.errors import ConfigError, VisemeScopeError

# Labels rewritten to the silence phoneme unless the config says otherwise
DEFAULT_SILENCE_LABELS = ["sil", "sp", "<eps>", "<sil>"]

# Word-position suffixes written by some aligners (e.g. "AH0_B")
POSITION_MARKER_RE = re.compile(r"_[BIES]$")

TIME_UNITS = {"s": 1.0, "ms": 1e-3}


def apply_column_mapping(df: pd.DataFrame, mapping: dict[str, str]) -> pd.DataFrame:
    """Rename source columns to target columns based on mapping.

    Args:
        df: Input DataFrame
        mapping: Dict mapping source column names to Alignment CSV column names

    Returns:
        DataFrame with renamed columns
    """
    unknown = sorted(set(mapping.values()) - set(ALIGNMENT_COLUMNS))
    if unknown:
        raise ConfigError(f"mapping targets {unknown} are not Alignment CSV columns {ALIGNMENT_COLUMNS}")
    rename_map = {src: dst for src, dst in mapping.items() if src in df.columns}
    return df.rename(columns=rename_map)


def apply_tier_filter(df: pd.DataFrame, tier_filter: dict[str, str] | None) -> pd.DataFrame:
    """Keep only rows whose ``tier_filter["column"]`` equals ``tier_filter["value"]``."""
    if not tier_filter:
        return df
    column = tier_filter["column"]
    if column not in df.columns:
        raise ConfigError(f"tier filter column {column!r} not in input columns {list(df.columns)}")
    return df[df[column].astype(str) == str(tier_filter["value"])].reset_index(drop=True)


def resolve_utterance_id(
    df: pd.DataFrame, utterance_config: dict[str, Any], input_path: Path
) -> pd.DataFrame:
    """Set the utterance_id column.

    Args:
        df: DataFrame with mapped columns
        utterance_config: One of {"column": "col_name"}, {"fixed": "value"}
            or {"from_filename": true} (input file stem)
        input_path: Input CSV path, used for "from_filename"

    Returns:
        DataFrame with an ``utterance_id`` column
    """
    if "column" in utterance_config:
        column = utterance_config["column"]
        if column not in df.columns:
            raise ConfigError(f"utterance id column {column!r} not in input columns")
        df["utterance_id"] = df[column].astype(str)
    elif "fixed" in utterance_config:
        df["utterance_id"] = str(utterance_config["fixed"])
    elif utterance_config.get("from_filename") or "utterance_id" not in df.columns:
        df["utterance_id"] = input_path.stem
    return df


def clean_labels(
    labels: pd.Series,
    silence_labels: list[str],
    strip_position_markers: bool,
) -> pd.Series:
    """Strip position markers and rewrite silence labels to ``sil``."""
    cleaned = labels.astype(str).str.strip()
    if strip_position_markers:
        cleaned = cleaned.str.replace(POSITION_MARKER_RE, "", regex=True)
    silence = {label.lower() for label in silence_labels}
    return cleaned.where(~cleaned.str.lower().isin(silence), SILENCE)


def convert_times(df: pd.DataFrame, time_units: str) -> pd.DataFrame:
    """Convert start_s/end_s to seconds."""
    if time_units not in TIME_UNITS:
        raise ConfigError(f"time_units must be one of {list(TIME_UNITS)}, got {time_units!r}")
    factor = TIME_UNITS[time_units]
    for column in ("start_s", "end_s"):
        values = pd.to_numeric(df[column], errors="coerce")
        df[column] = values if factor == 1.0 else values * factor
    return df


def convert(
    input_csv: str | Path,
    output_csv: str | Path,
    config: dict[str, Any],
) -> pd.DataFrame:
    """Convert an alignment export to the Alignment CSV format.

    Args:
        input_csv: Path to input CSV file
        output_csv: Path to output CSV file
        config: Configuration dict with keys:
            - column_mapping: Dict mapping source to target column names
            - utterance_id: {"column": "col_name"}, {"fixed": "value"} or
              {"from_filename": true}; default is a mapped utterance_id
              column, else the input file stem
            - tier_filter: {"column": "Type", "value": "phones"} keeps only
              matching rows
            - time_units: "s" (default) or "ms"
            - silence_labels: Labels rewritten to "sil"
            - drop_labels: Labels whose rows are removed (e.g. "spn")
            - strip_position_markers: Remove "_B/_I/_E/_S" suffixes

    Returns:
        The converted DataFrame, in Alignment CSV order

    Example config for an aligner export:
        {
            "column_mapping": {
                "Begin": "start_s",
                "End": "end_s",
                "Label": "phoneme",
            },
            "tier_filter": {"column": "Type", "value": "phones"},
            "utterance_id": {"from_filename": True},
            "drop_labels": ["spn"],
        }

    Raises:
        ConfigError: the config names missing columns or unknown units.
        MalformedRow, NonMonotoneTimes, OverlappingSegments: the converted
            rows are not a valid Alignment CSV.
    """
    input_path = Path(input_csv)
    df = pd.read_csv(input_path, dtype=str, keep_default_na=False)

    df = apply_tier_filter(df, config.get("tier_filter"))
    df = apply_column_mapping(df, config.get("column_mapping", {}))
    df = resolve_utterance_id(df, config.get("utterance_id", {}), input_path)

    missing = [c for c in ALIGNMENT_COLUMNS if c not in df.columns]
    if missing:
        raise ConfigError(f"columns {missing} are not mapped from {input_path.name}")

    drop = {label.strip() for label in config.get("drop_labels", [])}
    strip_markers = bool(config.get("strip_position_markers", False))
    df["phoneme"] = clean_labels(
        df["phoneme"], config.get("silence_labels", DEFAULT_SILENCE_LABELS), strip_markers
    )
    df = df[~df["phoneme"].isin(drop)]
    df = convert_times(df[ALIGNMENT_COLUMNS].copy(), config.get("time_units", "s"))

    # Round-trip through the parser so only valid Alignment CSV is written.
    staged = df.to_csv(index=False, lineterminator="\n").encode("utf-8")
    segments = parse_alignment_csv(staged)
    output = write_alignment_csv(segments)
    Path(output_csv).write_bytes(output)

    return pd.read_csv(io.BytesIO(output), dtype={"utterance_id": str, "phoneme": str})


def parse_mapping_string(mapping_str: str) -> dict[str, str]:
    """Parse a mapping string like 'Begin:start_s,End:end_s' into a dict."""
    mapping = {}
    for pair in mapping_str.split(","):
        if ":" in pair:
            src, dst = pair.split(":", 1)
            mapping[src.strip()] = dst.strip()
    return mapping


def load_python_config(path: str | Path) -> dict[str, Any]:
    """Load configuration from a Python file.

    The Python file should define a `config` dict variable, e.g.:

        config = {
            "column_mapping": {"Begin": "start_s", "End": "end_s", "Label": "phoneme"},
            "utterance_id": {"from_filename": True},
        }

    Args:
        path: Path to the Python config file

    Returns:
        The config dict from the file
    """
    path = Path(path)
    spec = importlib.util.spec_from_file_location("config_module", path)
    if spec is None or spec.loader is None:
        raise ImportError(f"Could not load config from {path}")

    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)

    if not hasattr(module, "config"):
        raise ValueError(f"Config file {path} must define a 'config' variable")

    return module.config


def load_config(path: str | Path) -> dict[str, Any]:
    """Load a JSON or Python converter config."""
    path = Path(path)
    if path.suffix == ".py":
        return load_python_config(path)
    with open(path) as f:
        return json.load(f)


def main() -> None:
    """CLI entry point."""
    parser = argparse.ArgumentParser(
        description="Convert phone alignment exports to Alignment CSV format"
    )
    parser.add_argument("input", help="Input CSV file path")
    parser.add_argument("-o", "--output", required=True, help="Output CSV file path")
    parser.add_argument(
        "-c", "--config", help="Config file path (JSON or Python)"
    )
    parser.add_argument(
        "-m", "--mapping",
        help="Column mapping as 'src:dst,src:dst,...' (e.g., 'Begin:start_s,End:end_s,Label:phoneme')"
    )
    parser.add_argument(
        "--utterance-id-column",
        help="Column name containing utterance IDs"
    )
    parser.add_argument(
        "--utterance-id-fixed",
        help="Fixed utterance ID to use for all rows"
    )
    parser.add_argument(
        "--tier",
        help="Keep rows where COLUMN equals VALUE, given as 'column:value' (e.g., 'Type:phones')"
    )
    parser.add_argument(
        "--ms",
        action="store_true",
        help="Input times are in milliseconds"
    )
    parser.add_argument(
        "--drop-labels",
        help="Comma-separated labels whose rows are removed (e.g., 'spn')"
    )
    parser.add_argument(
        "--strip-position-markers",
        action="store_true",
        help="Remove _B/_I/_E/_S word-position suffixes from labels"
    )

    args = parser.parse_args()

    # Build config
    config = load_config(args.config) if args.config else {}

    # Override with CLI arguments
    if args.mapping:
        config["column_mapping"] = parse_mapping_string(args.mapping)

    if args.utterance_id_column:
        config["utterance_id"] = {"column": args.utterance_id_column}
    elif args.utterance_id_fixed:
        config["utterance_id"] = {"fixed": args.utterance_id_fixed}

    if args.tier:
        if ":" not in args.tier:
            parser.error("--tier must be 'column:value'")
        column, value = args.tier.split(":", 1)
        config["tier_filter"] = {"column": column.strip(), "value": value.strip()}

    if args.ms:
        config["time_units"] = "ms"

    if args.drop_labels:
        config["drop_labels"] = [label.strip() for label in args.drop_labels.split(",")]

    if args.strip_position_markers:
        config["strip_position_markers"] = True

    # Run conversion
    try:
        convert(args.input, args.output, config)
    except VisemeScopeError as exc:
        print(f"error: {args.input}: {exc}", file=sys.stderr)
        sys.exit(2)
    print(f"Converted {args.input} -> {args.output}")


if __name__ == "__main__":
    main()

"""Example configuration for alignment_converter.

Copy this file and modify to match your aligner's export columns.
"""

# =============================================================================
# FORCED ALIGNER CSV EXPORT (one file per utterance)
# =============================================================================
# Use this for exports with words and phones interleaved, like:
#   Begin,End,Label,Type,Speaker
#   0.00,0.31,hello,words,spk1
#   0.00,0.08,HH,phones,spk1
#   0.08,0.15,AH0,phones,spk1

config = {
    # Map source column names to Alignment CSV column names
    "column_mapping": {
        "Begin": "start_s",
        "End": "end_s",
        "Label": "phoneme",
    },

    # Keep only the phone tier
    "tier_filter": {"column": "Type", "value": "phones"},

    # Utterance ID configuration - choose one:
    # Option 1: Use the input file name (e.g. "spk1_0001.csv" -> "spk1_0001")
    "utterance_id": {"from_filename": True},
    # Option 2: Use a column from your source CSV
    # "utterance_id": {"column": "Speaker"},
    # Option 3: Use a fixed value for all rows
    # "utterance_id": {"fixed": "utt_0001"},

    # "s" (default) or "ms"
    "time_units": "s",

    # Rewritten to "sil"
    "silence_labels": ["sil", "sp", "<eps>"],

    # Rows removed entirely (spoken noise has no viseme)
    "drop_labels": ["spn"],

    # Set to True for labels like "AH0_B"
    "strip_position_markers": False,
}

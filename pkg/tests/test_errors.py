"""Tests for the exception hierarchy."""

from __future__ import annotations

import pickle

import pytest

from viseme_scope.errors import (
    BandwidthSearchFailed,
    ClassIndexMismatch,
    ClassTooSmall,
    ConfigError,
    MalformedRow,
    MissingUtterance,
    OverlappingSegments,
    VisemeScopeError,
    ZeroVector,
)


class TestPickling:
    """Errors cross process boundaries when jobs run in a worker pool."""

    @pytest.mark.parametrize(
        "error",
        [
            ClassTooSmall("ER", 2, minimum=3),
            ClassTooSmall("P", 1),
            MalformedRow(4, "end_s is not a number"),
            MissingUtterance("spk1_0001", "clean-av", 11),
            OverlappingSegments("spk1_0001", (0.0, 0.2), (0.1, 0.3)),
            BandwidthSearchFailed([3, 7]),
            ZeroVector(),
            ConfigError("perplexity too large"),
            ClassIndexMismatch("class sets differ"),
        ],
        ids=lambda e: type(e).__name__,
    )
    def test_round_trip_keeps_message_and_fields(self, error: VisemeScopeError) -> None:
        restored = pickle.loads(pickle.dumps(error))
        assert type(restored) is type(error)
        assert str(restored) == str(error)
        assert vars(restored) == vars(error)

    def test_restored_error_is_still_catchable(self) -> None:
        restored = pickle.loads(pickle.dumps(ClassTooSmall("ER", 2, minimum=3)))
        with pytest.raises(ValueError, match="need at least 3"):
            raise restored
        assert (restored.viseme, restored.count, restored.minimum) == ("ER", 2, 3)

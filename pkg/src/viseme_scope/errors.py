"""Exceptions raised by viseme_scope.

Every error the pipeline can surface derives from VisemeScopeError so the
CLI can map them to a single exit code.
"""

from __future__ import annotations

from typing import Any


def _rebuild(cls: type[VisemeScopeError], args: tuple, kwargs: dict[str, Any]) -> VisemeScopeError:
    return cls(*args, **kwargs)


class VisemeScopeError(Exception):
    """Base class for all toolkit errors.

    Subclasses format their message from typed fields, so the constructor
    arguments are recorded here and replayed on unpickling. Errors raised
    inside worker processes reach the parent with their fields intact.
    """

    def __new__(cls, *args: Any, **kwargs: Any) -> VisemeScopeError:
        self = super().__new__(cls, *args)
        self._ctor = (args, kwargs)
        return self

    def __reduce__(self) -> tuple:
        args, kwargs = self._ctor
        return (_rebuild, (type(self), args, kwargs), self.__dict__)


class ConfigError(VisemeScopeError, ValueError):
    """Invalid configuration value or missing input path."""


# Alignment ------------------------------------------------------------------


class EmptyLabel(VisemeScopeError, ValueError):
    def __init__(self, raw: str) -> None:
        super().__init__(f"phoneme label {raw!r} is empty after normalization")
        self.raw = raw


class UnknownCharacters(VisemeScopeError, ValueError):
    def __init__(self, raw: str, normalized: str) -> None:
        super().__init__(
            f"phoneme label {raw!r} normalizes to {normalized!r}, "
            "which is not 1-3 lowercase letters"
        )
        self.raw = raw
        self.normalized = normalized


class UnmappedPhoneme(VisemeScopeError, LookupError):
    def __init__(self, phoneme: str, map_name: str) -> None:
        super().__init__(f"phoneme {phoneme!r} is not in viseme map {map_name!r}")
        self.phoneme = phoneme
        self.map_name = map_name


class MalformedRow(VisemeScopeError, ValueError):
    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class NonMonotoneTimes(VisemeScopeError, ValueError):
    def __init__(self, line_no: int, start: float, end: float) -> None:
        super().__init__(f"line {line_no}: end {end} is not after start {start}")
        self.line_no = line_no
        self.start = start
        self.end = end


class OverlappingSegments(VisemeScopeError, ValueError):
    def __init__(self, utterance_id: str, first: tuple[float, float], second: tuple[float, float]) -> None:
        super().__init__(
            f"utterance {utterance_id!r}: segment {second} overlaps {first}"
        )
        self.utterance_id = utterance_id
        self.first = first
        self.second = second


# Features -------------------------------------------------------------------


class BadMagic(VisemeScopeError, ValueError):
    def __init__(self, found: bytes) -> None:
        super().__init__(f"not an EMB1 container (magic {found!r})")
        self.found = found


class ShapeMismatch(VisemeScopeError, ValueError):
    def __init__(self, what: str, expected: int, found: int) -> None:
        super().__init__(f"{what}: expected {expected}, found {found}")
        self.what = what
        self.expected = expected
        self.found = found


class NonFiniteValue(VisemeScopeError, ValueError):
    def __init__(self, row: int, col: int) -> None:
        super().__init__(f"non-finite value at row {row}, column {col}")
        self.row = row
        self.col = col


class EmptyCoverage(VisemeScopeError, ValueError):
    def __init__(self, start: float, end: float) -> None:
        super().__init__(f"no frame center falls inside [{start}, {end})")
        self.start = start
        self.end = end


class MissingUtterance(VisemeScopeError, LookupError):
    def __init__(self, utterance_id: str, condition: str, layer: int) -> None:
        super().__init__(
            f"no embeddings for utterance {utterance_id!r} "
            f"(condition {condition!r}, layer {layer})"
        )
        self.utterance_id = utterance_id
        self.condition = condition
        self.layer = layer


# t-SNE ----------------------------------------------------------------------


class ZeroVector(VisemeScopeError, ValueError):
    def __init__(self, index: int | None = None) -> None:
        where = "" if index is None else f" (row {index})"
        super().__init__(f"cosine distance undefined for a zero vector{where}")
        self.index = index


class BandwidthSearchFailed(VisemeScopeError):
    def __init__(self, rows: list[int]) -> None:
        super().__init__(
            f"perplexity search did not converge for {len(rows)} row(s), first {rows[:5]}"
        )
        self.rows = rows


class DegenerateCovariance(VisemeScopeError, ValueError):
    pass


class NonFiniteIterate(VisemeScopeError, ArithmeticError):
    def __init__(self, iteration: int) -> None:
        super().__init__(f"non-finite embedding at iteration {iteration}")
        self.iteration = iteration


# Probe ----------------------------------------------------------------------


class ClassTooSmall(VisemeScopeError, ValueError):
    def __init__(self, viseme: str, count: int, minimum: int = 2) -> None:
        super().__init__(f"viseme {viseme!r} has {count} record(s); need at least {minimum}")
        self.viseme = viseme
        self.count = count
        self.minimum = minimum


class NonFiniteLoss(VisemeScopeError, ArithmeticError):
    def __init__(self, epoch: int, loss: float) -> None:
        super().__init__(f"loss became {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


# Metrics / report -----------------------------------------------------------


class LengthMismatch(VisemeScopeError, ValueError):
    def __init__(self, n_true: int, n_pred: int) -> None:
        super().__init__(f"{n_true} true labels but {n_pred} predictions")
        self.n_true = n_true
        self.n_pred = n_pred


class UnknownLabel(VisemeScopeError, LookupError):
    def __init__(self, label: str) -> None:
        super().__init__(f"label {label!r} is not in the class index")
        self.label = label


class ClassIndexMismatch(VisemeScopeError, ValueError):
    pass


class PaletteIncomplete(VisemeScopeError, LookupError):
    def __init__(self, missing: list[str]) -> None:
        super().__init__(f"palette has no color for {missing}")
        self.missing = missing


class KTooLarge(VisemeScopeError, ValueError):
    def __init__(self, k: int, n_samples: int) -> None:
        super().__init__(f"trustworthiness needs 1 <= k < N/2, got k={k}, N={n_samples}")
        self.k = k
        self.n_samples = n_samples

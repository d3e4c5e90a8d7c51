"""Exception types raised across the library.

Every error carries a human-readable message; a few carry structured
context (e.g. the failing position for template mismatches) so callers
can report precise diagnostics.
"""

from __future__ import annotations


class SemShieldError(Exception):
    """Base class for all library errors."""


class TemplateMismatch(SemShieldError):
    """Prompt does not parse under the requested template grammar.

    ``position`` is the index of the first word where parsing failed
    (-1 when the failure is not attributable to a single word).
    """

    def __init__(self, message: str, position: int = -1):
        super().__init__(message)
        self.position = position


class AlignmentError(SemShieldError):
    """A concept word has no covering sub-word tokens."""


class DegenerateRow(SemShieldError):
    """Every key of some attention row is masked; softmax is undefined."""


class ShapeMismatch(SemShieldError):
    """Operands disagree on shape or grid."""


class EmptySelection(SemShieldError):
    """No attention record passed the step/layer filter."""


class OverlapError(SemShieldError):
    """Concept regions overlap where disjointness is required."""


class RecordMismatch(SemShieldError):
    """A replayed step/layer has no stored attention map."""


class BackendFailure(SemShieldError):
    """The denoiser backend raised during prediction."""


class MalformedResponse(SemShieldError):
    """A scorer response could not be parsed."""


class InvalidAssignment(SemShieldError):
    """A manual region/token assignment is out of range or inconsistent."""


class MissingRecord(SemShieldError):
    """A requested entry is absent from a dump container."""

"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can emit
``{code, message, context}`` JSON without string matching.
"""

from __future__ import annotations


class G2SError(Exception):
    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "context": self.context}


class InvalidCoordinate(G2SError, ValueError):
    code = "invalid_coordinate"


class PolarReference(G2SError, ValueError):
    code = "polar_reference"


class EmptyTrack(G2SError, ValueError):
    code = "empty_track"


class NonMonotonicTimestamps(G2SError, ValueError):
    code = "non_monotonic_timestamps"


class InvalidRate(G2SError, ValueError):
    code = "invalid_rate"


class NonPositiveDepth(G2SError, ValueError):
    code = "non_positive_depth"


class ShapeMismatch(G2SError, ValueError):
    code = "shape_mismatch"


class ZeroMeanDisparity(G2SError, ValueError):
    code = "zero_mean_disparity"


class DegenerateTranslation(G2SError, ValueError):
    code = "degenerate_translation"


class EpochOutOfRange(G2SError, ValueError):
    code = "epoch_out_of_range"


class NoValidTriplets(G2SError, ValueError):
    code = "no_valid_triplets"


class DivergenceDetected(G2SError, RuntimeError):
    code = "divergence_detected"


class NoValidPixels(G2SError, ValueError):
    code = "no_valid_pixels"


class EmptyInput(G2SError, ValueError):
    code = "empty_input"


class NonPositiveFactor(G2SError, ValueError):
    code = "non_positive_factor"


class InvalidGeometry(G2SError, ValueError):
    code = "invalid_geometry"


class ParseError(G2SError, ValueError):
    code = "parse_error"


class MissingTimestamps(G2SError, FileNotFoundError):
    code = "missing_timestamps"


class ConfigError(G2SError, ValueError):
    code = "config_error"


class IndexOutOfRange(G2SError, IndexError):
    code = "index_out_of_range"

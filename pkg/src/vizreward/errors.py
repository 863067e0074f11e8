"""Exception types shared across the engine."""


class VizRewardError(Exception):
    """Base class for all engine errors."""


class DecodeFailure(VizRewardError):
    """Raster byte stream could not be decoded as PNG."""


class BackendUnavailable(VizRewardError):
    """Remote embedding backend unreachable, timed out, or misbehaving."""


class DimensionMismatch(VizRewardError):
    """Vector dimensionalities disagree with each other or with the declared width."""


class DuplicateLanguage(VizRewardError):
    """A renderer is already registered for this language."""


class InvalidTemplate(VizRewardError):
    """Renderer command template is missing or duplicating a placeholder."""


class UnknownLanguage(VizRewardError):
    """No renderer registered for the requested language."""


class GroupTooSmall(VizRewardError):
    """Rollout group has fewer than two rewards."""


class ShapeMismatch(VizRewardError):
    """Nested reward/ratio structures do not line up."""


class Infeasible(VizRewardError):
    """Transportation problem marginals are not balanced."""


class DegenerateNormalizer(VizRewardError):
    """Similarity normalizer collapsed to zero."""


class ParseError(VizRewardError):
    """Molecular line notation could not be parsed.

    Carries the character position where parsing failed.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


class WidthMismatch(VizRewardError):
    """Fingerprints of different bit widths cannot be compared."""


class KTooLarge(VizRewardError):
    """Requested more clusters than data points."""


class MissingDraft(VizRewardError):
    """Refinement record requested without draft code."""


class BadRequest(VizRewardError):
    """Malformed scoring request."""


class RenderRegistryEmpty(VizRewardError):
    """Scoring requested but no renderer is registered."""

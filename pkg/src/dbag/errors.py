"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class BackendUnavailable(PipelineError):
    """A required feature/detection backend is not registered."""


class DecodeError(PipelineError):
    """A video source could not be opened or decoded."""


class EmptyCandidates(PipelineError):
    """Primary-face selection was called with no candidate boxes."""


class IndexOutOfRange(PipelineError):
    """A landmark index or index window falls outside the landmark array."""


class DimensionMismatch(PipelineError):
    """A backend emitted a vector of unexpected dimensionality."""


class LengthMismatch(PipelineError):
    """Per-frame feature blocks disagree on frame count."""


class CorruptCache(PipelineError):
    """A cache file failed magic/dimension/size validation."""


class InsufficientClassSamples(PipelineError):
    """Triplet construction needs two classes and at least one class with two samples."""


class DivergenceDetected(PipelineError):
    """Training loss became non-finite."""


class ShapeError(PipelineError):
    """Network input does not have the expected slice shape."""


class StatsMismatch(PipelineError):
    """Feature standardization stats do not match the checkpoint's stats."""


class EmptyReference(PipelineError):
    """The reference set holds no embeddings."""


class MTooLarge(PipelineError):
    """Requested neighbor count exceeds the reference set size."""


class NoSlices(PipelineError):
    """A video verdict was requested with zero slice verdicts."""


class SingleClassError(PipelineError):
    """AUC/EER need at least one positive and one negative sample."""


class EmptyManifest(PipelineError):
    """The dataset manifest holds no usable records."""


class SplitError(PipelineError):
    """A split request cannot produce non-empty train and test sides."""


class MissingCache(PipelineError):
    """A required feature cache file is absent."""


class MissingArtifact(PipelineError):
    """A required checkpoint/reference/report file is absent."""


class ArtifactMismatch(PipelineError):
    """Hash chain between artifacts is broken (stale or foreign artifact)."""

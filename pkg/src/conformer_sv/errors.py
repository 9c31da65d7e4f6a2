"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class UnsupportedFormat(PipelineError):
    """Audio file is not mono 16-bit PCM RIFF/WAVE at the expected rate."""


class TruncatedFile(PipelineError):
    """File declares more payload bytes than it contains."""


class TooShort(PipelineError):
    """Audio shorter than a single analysis window."""


class ShapeMismatch(PipelineError):
    """Operand shapes are incompatible for the requested op."""


class DegenerateBatch(PipelineError):
    """Batch statistics requested on fewer than two elements."""


class NonScalarLoss(PipelineError):
    """backward() called on a non-scalar tensor."""


class GraphConsumed(PipelineError):
    """backward() called twice on the same graph."""


class LabelOutOfRange(PipelineError):
    """Class label outside [0, num_classes)."""


class ZeroVector(PipelineError):
    """Cosine scoring requested on a zero embedding."""


class DegenerateCohort(PipelineError):
    """Cohort score standard deviation is (numerically) zero."""


class EmptyClass(PipelineError):
    """Score set is missing target or nontarget trials."""


class ConfigError(PipelineError):
    """Unknown or malformed configuration key."""

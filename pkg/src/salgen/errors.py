"""Exception and warning types shared across the package."""


class SalgenError(Exception):
    """Base class for all package-specific errors."""


# -- dataset ingestion ------------------------------------------------------

class BadMagic(SalgenError):
    """IDX payload does not start with the expected magic number."""


class TruncatedFile(SalgenError):
    """IDX payload length disagrees with the dimensions in its header."""


class LabelOutOfRange(SalgenError):
    """A label byte falls outside the 0..9 class range."""


class InsufficientClassMembers(SalgenError):
    """A class has fewer members than the requested per-class sample count."""


# -- tensor / network core --------------------------------------------------

class ShapeMismatch(SalgenError):
    """Operand shapes do not compose."""


class TapeConsumed(SalgenError):
    """Backward was called twice on a single-use tape."""


class DivergedTraining(SalgenError):
    """Training produced a non-finite or non-converging loss."""


class UnsupportedLayer(SalgenError):
    """The requested propagation rule is undefined for this layer kind."""


# -- attribution ------------------------------------------------------------

class SingularRegression(SalgenError):
    """Unregularized surrogate fit on a rank-deficient design."""


# -- metrics ----------------------------------------------------------------

class TooFewSamples(SalgenError):
    """Gaussian fitting needs at least two samples."""


class NotSymmetric(SalgenError):
    """Matrix is not symmetric within tolerance."""


class IndefiniteMatrix(SalgenError):
    """Matrix has an eigenvalue below the PSD tolerance."""


class DimensionMismatch(SalgenError):
    """Distribution parameters live in different dimensions."""


# -- scoring / pipeline -----------------------------------------------------

class CurveTooShort(SalgenError):
    """Metric curve has fewer epochs than the averaging window."""


class NoMethodsConfigured(SalgenError):
    """A comparison run was requested with an empty method list."""


class StageFailed(SalgenError):
    """A pipeline stage raised; partial results were persisted."""


# -- warnings ---------------------------------------------------------------

class ConstantInputWarning(UserWarning):
    """Correlation of a constant grid was requested; sentinel 0 returned."""


class ConstantMapWarning(UserWarning):
    """A constant saliency map was normalized to the all-0.5 grid."""


class DegenerateDatasetWarning(UserWarning):
    """Training set contains a single class."""


class DegenerateCovarianceWarning(UserWarning):
    """Latents are (near) constant; Frechet statistics are degenerate."""

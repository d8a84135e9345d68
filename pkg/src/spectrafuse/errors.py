"""Exception hierarchy for bundle validation and numerical failures."""


class SpectraFuseError(Exception):
    """Base class for all errors raised by this package."""


# --- bundle I/O ---

class BundleError(SpectraFuseError):
    pass


class MissingFile(BundleError):
    pass


class ShapeMismatch(BundleError):
    pass


class ManifestInvalid(BundleError):
    pass


class NonFinite(BundleError):
    pass


class IoFailure(BundleError):
    pass


# --- spectral core ---

class NotSymmetric(SpectraFuseError):
    pass


class ConvergenceFailure(SpectraFuseError):
    pass


class InvalidEta(SpectraFuseError, ValueError):
    pass


class InvalidEpsilon(SpectraFuseError, ValueError):
    pass


# --- graph matching ---

class InvalidM(SpectraFuseError, ValueError):
    pass


class LengthMismatch(SpectraFuseError, ValueError):
    pass


class NotSquare(SpectraFuseError, ValueError):
    pass


class TooLarge(SpectraFuseError, ValueError):
    pass


# --- text semantics ---

class InvalidN(SpectraFuseError, ValueError):
    pass


class InvalidAlpha(SpectraFuseError, ValueError):
    pass


# --- segmentation ---

class InvalidGamma(SpectraFuseError, ValueError):
    pass


class CoverageGap(SpectraFuseError):
    pass

"""Exception hierarchy shared by every stage of the rectification pipeline."""


class DocPatchError(Exception):
    """Base class for all library errors."""


class FormatError(DocPatchError, ValueError):
    """A file or raster does not have the expected layout."""


class SizeError(DocPatchError, ValueError):
    """Dimensions violate an operation's precondition."""


class DimensionMismatch(DocPatchError, ValueError):
    pass


class EmptyMaskError(DocPatchError, ValueError):
    pass


class CenterInvalidError(DocPatchError, ValueError):
    """The reference pixel of a patch flow is masked out."""


class MissingGroundTruth(DocPatchError):
    pass


class MissingExternalFile(DocPatchError, FileNotFoundError):
    pass


class InfeasibleLabeling(DocPatchError):
    pass


class NoConvergence(DocPatchError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CountMismatch(DocPatchError, ValueError):
    pass


class BadWindow(DocPatchError, ValueError):
    pass

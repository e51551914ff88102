"""Exception types raised by the detector."""


class InvalidInputError(ValueError):
    """Bad shapes, out-of-range parameters or images too small for an operation."""


class FeatureMapError(ValueError):
    """Raised when an FMAP file cannot be decoded.

    ``index`` is the element index of the first offending value (or None) and
    ``byte_offset`` the matching position in the file.
    """

    def __init__(self, message, index=None, byte_offset=None):
        super().__init__(message)
        self.index = index
        self.byte_offset = byte_offset


class CalibrationError(ValueError):
    """The residual is constant, so no noise model can be fitted."""

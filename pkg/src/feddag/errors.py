"""Exception hierarchy shared by every feddag module."""


class FedDagError(Exception):
    """Base class for all feddag errors."""


class DimensionMismatch(FedDagError):
    def __init__(self, message, site_id=None):
        super().__init__(message)
        self.site_id = site_id


class EmptyDataset(FedDagError):
    def __init__(self, message, site_id=None):
        super().__init__(message)
        self.site_id = site_id


class ShapeMismatch(FedDagError):
    pass


class NonFinite(FedDagError, FloatingPointError):
    """Raised when an input or an intermediate result holds NaN/Inf."""


class SingularSystem(FedDagError):
    pass


class CyclicInput(FedDagError):
    pass


class LabelMismatch(FedDagError):
    pass


class ParseError(FedDagError):
    def __init__(self, message, path=None, line=None, column=None):
        super().__init__(message)
        self.path = path
        self.line = line
        self.column = column


class TransportFailure(FedDagError):
    def __init__(self, message, site_id=None):
        super().__init__(message)
        self.site_id = site_id


class ProtocolViolation(FedDagError):
    pass


class ChecksumMismatch(ProtocolViolation):
    pass

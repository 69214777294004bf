"""Exception hierarchy shared across the pipeline."""


class DeltaforgeError(Exception):
    """Base class for all pipeline errors."""


# raster_io
class UnsupportedTiff(DeltaforgeError):
    def __init__(self, message, tag=None):
        super().__init__(message)
        self.tag = tag


class CorruptTiff(DeltaforgeError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class MissingGeoreference(DeltaforgeError):
    pass


class CorruptGridpack(DeltaforgeError):
    pass


class UnsupportedGridpack(DeltaforgeError):
    pass


class EmptyBand(DeltaforgeError):
    pass


class BadBandSelection(DeltaforgeError):
    pass


# classify
class StaleLabels(DeltaforgeError):
    pass


class BadK(DeltaforgeError):
    pass


class DegenerateTraining(DeltaforgeError):
    pass


class ShapeMismatch(DeltaforgeError):
    pass


class EmptyEvaluation(DeltaforgeError):
    pass


class UnknownClass(DeltaforgeError):
    pass


# georef
class SingularTransform(DeltaforgeError):
    pass


class DegenerateGcps(DeltaforgeError):
    pass


class BadZone(DeltaforgeError):
    pass


class UnknownCrs(DeltaforgeError):
    pass


# vectorize
class NoSuchComponent(DeltaforgeError):
    pass


# primitive_store
class RejectedGeometry(DeltaforgeError):
    pass


class NotFound(DeltaforgeError):
    pass


class IllegalTransition(DeltaforgeError):
    pass


class IncompatibleSnapshot(DeltaforgeError):
    pass


class CorruptSnapshot(DeltaforgeError):
    def __init__(self, message, line_no=None):
        super().__init__(message)
        self.line_no = line_no


# osm_export
class UnmappedClass(DeltaforgeError):
    pass


class NotGeoreferenced(DeltaforgeError):
    pass


# workflow
class BadPalette(DeltaforgeError):
    pass


class BadLabel(DeltaforgeError):
    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class NoModel(DeltaforgeError):
    pass


class NoClassMap(DeltaforgeError):
    pass


class EmptyExport(Warning):
    """Raised as a warning: export produced a valid but empty document."""

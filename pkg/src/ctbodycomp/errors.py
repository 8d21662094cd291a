"""Exception taxonomy shared across the package.

Every parse/compute failure surfaces as a subclass of CtBodyCompError so
callers (and the pipeline's per-study error isolation) can catch one type.
"""

from __future__ import annotations


class CtBodyCompError(Exception):
    """Base class for all typed errors raised by this package."""


# --- DICOM parsing ---------------------------------------------------------


class DicomParseError(CtBodyCompError):
    """Base class for DICOM byte-stream failures."""


class UnsupportedTransferSyntax(DicomParseError):
    def __init__(self, uid: str):
        super().__init__(f"unsupported transfer syntax: {uid!r}")
        self.uid = uid


class UnsupportedPixelFormat(DicomParseError):
    """Pixel data outside the uncompressed 16-bit single-sample contract."""


class MissingRequiredTag(DicomParseError):
    def __init__(self, tag: tuple[int, int], name: str = ""):
        label = f"({tag[0]:04X},{tag[1]:04X})" + (f" {name}" if name else "")
        super().__init__(f"missing required tag {label}")
        self.tag = tag


class TruncatedElement(DicomParseError):
    """Declared element length runs past the end of the byte stream."""


# --- NIfTI parsing ---------------------------------------------------------


class NiftiParseError(CtBodyCompError):
    """Base class for NIfTI-1 failures."""


class BadMagic(NiftiParseError):
    pass


class UnsupportedDatatype(NiftiParseError):
    def __init__(self, code: int):
        super().__init__(f"unsupported NIfTI datatype code {code}")
        self.code = code


class DimensionMismatch(CtBodyCompError):
    """Shape disagreement: volume dims, stacked maps, or mask geometry."""


class TruncatedVolume(NiftiParseError):
    """Header or voxel payload shorter than the declared size."""


class PmapFormatError(CtBodyCompError):
    """Probability-map file violates the PMAP container contract."""


# --- geometry / catalog ----------------------------------------------------


class DegenerateOrientation(CtBodyCompError):
    """Row/column direction cosines are parallel; no slice normal exists."""


class EmptyInput(CtBodyCompError):
    pass


class ConflictingGeometry(CtBodyCompError):
    def __init__(self, series_uid: str, detail: str = ""):
        super().__init__(f"conflicting geometry in series {series_uid}: {detail}")
        self.series_uid = series_uid


# --- vertebra lookup -------------------------------------------------------


class LabelAbsent(CtBodyCompError):
    def __init__(self, label: int):
        super().__init__(f"label {label} absent from volume")
        self.label = label


# --- fusion / masks --------------------------------------------------------


class RaggedStack(CtBodyCompError):
    pass


class ShapeMismatch(CtBodyCompError):
    pass


class EmptyReference(CtBodyCompError):
    pass


class MissingSpacing(CtBodyCompError):
    pass


class HeightOutOfRange(CtBodyCompError):
    pass


class EmptyWindow(CtBodyCompError):
    pass


class GeometryMismatch(CtBodyCompError):
    pass


# --- uncertainty / calibration ---------------------------------------------


class DomainError(CtBodyCompError):
    pass


class SingleClass(CtBodyCompError):
    pass


class NonConvergence(CtBodyCompError):
    def __init__(self, message: str, gradient_norm: float | None = None):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class Unfitted(CtBodyCompError):
    pass


class LengthMismatch(CtBodyCompError):
    pass


# --- statistics ------------------------------------------------------------


class OutOfRange(CtBodyCompError):
    pass


class ConstantInput(CtBodyCompError):
    pass


class DegenerateR(CtBodyCompError):
    pass


class NoEvents(CtBodyCompError):
    pass


class Collinearity(CtBodyCompError):
    def __init__(self, columns: list[str]):
        super().__init__(f"singular information matrix; offending columns: {columns}")
        self.columns = columns


class NoAdmissiblePairs(CtBodyCompError):
    pass


# --- prediction ------------------------------------------------------------


class NonFiniteLoss(CtBodyCompError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class TooFewMinority(CtBodyCompError):
    pass


# --- phantom / pipeline ----------------------------------------------------


class InvalidSpec(CtBodyCompError):
    pass


class NoStudiesFound(CtBodyCompError):
    pass


class UnknownPatient(CtBodyCompError):
    pass

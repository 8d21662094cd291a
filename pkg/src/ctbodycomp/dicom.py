"""Minimal DICOM reader/writer for routine axial CT exports.

Supports Explicit and Implicit VR Little Endian with uncompressed 16-bit
single-sample pixel data, which covers standard CT series exports. Anything
else (big endian, compressed transfer syntaxes, encapsulated pixel data)
raises a typed error instead of guessing. Every read is bounds-checked so a
truncated or hostile byte stream can never escape the typed-error contract.
"""

from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DicomParseError,
    MissingRequiredTag,
    TruncatedElement,
    UnsupportedPixelFormat,
    UnsupportedTransferSyntax,
)

IMPLICIT_VR_LE = "1.2.840.10008.1.2"
EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"
EXPLICIT_VR_BE = "1.2.840.10008.1.2.2"
CT_IMAGE_STORAGE = "1.2.840.10008.5.1.4.1.1.2"

Tag = tuple[int, int]

TAG_STUDY_DATE: Tag = (0x0008, 0x0020)
TAG_STUDY_DESCRIPTION: Tag = (0x0008, 0x1030)
TAG_SERIES_DESCRIPTION: Tag = (0x0008, 0x103E)
TAG_PATIENT_ID: Tag = (0x0010, 0x0020)
TAG_SLICE_THICKNESS: Tag = (0x0018, 0x0050)
TAG_SPACING_BETWEEN_SLICES: Tag = (0x0018, 0x0088)
TAG_STUDY_UID: Tag = (0x0020, 0x000D)
TAG_SERIES_UID: Tag = (0x0020, 0x000E)
TAG_SERIES_NUMBER: Tag = (0x0020, 0x0011)
TAG_ACQUISITION_NUMBER: Tag = (0x0020, 0x0012)
TAG_INSTANCE_NUMBER: Tag = (0x0020, 0x0013)
TAG_IMAGE_POSITION: Tag = (0x0020, 0x0032)
TAG_IMAGE_ORIENTATION: Tag = (0x0020, 0x0037)
TAG_FRAME_OF_REFERENCE: Tag = (0x0020, 0x0052)
TAG_SAMPLES_PER_PIXEL: Tag = (0x0028, 0x0002)
TAG_ROWS: Tag = (0x0028, 0x0010)
TAG_COLUMNS: Tag = (0x0028, 0x0011)
TAG_PIXEL_SPACING: Tag = (0x0028, 0x0030)
TAG_BITS_ALLOCATED: Tag = (0x0028, 0x0100)
TAG_BITS_STORED: Tag = (0x0028, 0x0101)
TAG_HIGH_BIT: Tag = (0x0028, 0x0102)
TAG_PIXEL_REPRESENTATION: Tag = (0x0028, 0x0103)
TAG_RESCALE_INTERCEPT: Tag = (0x0028, 0x1052)
TAG_RESCALE_SLOPE: Tag = (0x0028, 0x1053)
TAG_PIXEL_DATA: Tag = (0x7FE0, 0x0010)

_TAG_NAMES = {
    TAG_STUDY_DATE: "StudyDate",
    TAG_STUDY_DESCRIPTION: "StudyDescription",
    TAG_SERIES_DESCRIPTION: "SeriesDescription",
    TAG_PATIENT_ID: "PatientID",
    TAG_SLICE_THICKNESS: "SliceThickness",
    TAG_SPACING_BETWEEN_SLICES: "SpacingBetweenSlices",
    TAG_STUDY_UID: "StudyInstanceUID",
    TAG_SERIES_UID: "SeriesInstanceUID",
    TAG_SERIES_NUMBER: "SeriesNumber",
    TAG_ACQUISITION_NUMBER: "AcquisitionNumber",
    TAG_INSTANCE_NUMBER: "InstanceNumber",
    TAG_IMAGE_POSITION: "ImagePositionPatient",
    TAG_IMAGE_ORIENTATION: "ImageOrientationPatient",
    TAG_FRAME_OF_REFERENCE: "FrameOfReferenceUID",
    TAG_ROWS: "Rows",
    TAG_COLUMNS: "Columns",
    TAG_PIXEL_SPACING: "PixelSpacing",
    TAG_BITS_ALLOCATED: "BitsAllocated",
    TAG_BITS_STORED: "BitsStored",
    TAG_HIGH_BIT: "HighBit",
    TAG_PIXEL_REPRESENTATION: "PixelRepresentation",
    TAG_RESCALE_INTERCEPT: "RescaleIntercept",
    TAG_RESCALE_SLOPE: "RescaleSlope",
    TAG_PIXEL_DATA: "PixelData",
}

# VR codes a conforming Explicit VR stream may carry; used to sniff bare
# datasets and to validate element headers.
_KNOWN_VRS = {
    b"AE", b"AS", b"AT", b"CS", b"DA", b"DS", b"DT", b"FL", b"FD", b"IS",
    b"LO", b"LT", b"OB", b"OD", b"OF", b"OL", b"OW", b"PN", b"SH", b"SL",
    b"SQ", b"SS", b"ST", b"TM", b"UC", b"UI", b"UL", b"UN", b"UR", b"US",
    b"UT",
}
# VRs whose explicit form uses a 2-byte reserved field + 4-byte length.
_LONG_VRS = {b"OB", b"OD", b"OF", b"OL", b"OW", b"SQ", b"UC", b"UN", b"UR", b"UT"}

_UNDEFINED_LENGTH = 0xFFFFFFFF


@dataclass(frozen=True)
class SliceHeader:
    """Identity and geometry metadata for one axial CT slice."""

    patient_id: str
    study_uid: str
    series_uid: str
    frame_of_reference_uid: str
    series_number: int
    acquisition_number: int | None
    instance_number: int
    study_date: _dt.date
    series_description: str
    study_description: str
    rows: int
    columns: int
    pixel_spacing_row_mm: float
    pixel_spacing_col_mm: float
    slice_thickness_mm: float | None
    spacing_between_slices_mm: float | None
    image_position_mm: tuple[float, float, float]
    image_orientation: tuple[float, float, float, float, float, float]
    rescale_slope: float
    rescale_intercept: float


@dataclass(frozen=True)
class CtSlice:
    """A parsed CT slice: header plus the Hounsfield-unit pixel grid."""

    header: SliceHeader
    hu: np.ndarray  # float64, shape (rows, columns)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CtSlice):
            return NotImplemented
        return self.header == other.header and np.array_equal(self.hu, other.hu)


class _Cursor:
    """Bounds-checked view over the input bytes."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedElement(
                f"need {n} bytes at offset {self.pos}, only {self.remaining()} left"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def skip(self, n: int) -> None:
        self.take(n)

    def u16(self) -> int:
        b = self.take(2)
        return b[0] | (b[1] << 8)

    def u32(self) -> int:
        b = self.take(4)
        return b[0] | (b[1] << 8) | (b[2] << 16) | (b[3] << 24)


def _read_element(cur: _Cursor, explicit: bool) -> tuple[Tag, bytes]:
    """Read one data element, returning its tag and raw value bytes.

    Defined-length sequences are consumed and returned opaque; undefined
    lengths are rejected (they only occur with sequences or encapsulated
    pixel data, both outside this parser's contract).
    """
    group = cur.u16()
    element = cur.u16()
    tag = (group, element)
    if explicit:
        vr = cur.take(2)
        if vr not in _KNOWN_VRS:
            raise DicomParseError(
                f"invalid VR {vr!r} for tag ({group:04X},{element:04X})"
            )
        if vr in _LONG_VRS:
            cur.skip(2)
            length = cur.u32()
        else:
            length = cur.u16()
    else:
        length = cur.u32()
    if length == _UNDEFINED_LENGTH:
        raise DicomParseError(
            f"undefined-length element ({group:04X},{element:04X}) unsupported"
        )
    return tag, cur.take(length)


def _decode_string(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").rstrip(" \x00")


def _decode_int(raw: bytes, tag: Tag) -> int:
    try:
        return int(_decode_string(raw).strip())
    except ValueError as exc:
        raise DicomParseError(f"non-integer IS value for {_tag_label(tag)}") from exc


def _decode_floats(raw: bytes, tag: Tag, count: int) -> tuple[float, ...]:
    text = _decode_string(raw)
    parts = [p.strip() for p in text.split("\\")]
    if len(parts) != count:
        raise DicomParseError(
            f"{_tag_label(tag)} expected {count} values, got {len(parts)}"
        )
    try:
        values = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise DicomParseError(f"non-decimal DS value for {_tag_label(tag)}") from exc
    if any(not math.isfinite(v) for v in values):
        raise DicomParseError(f"non-finite DS value for {_tag_label(tag)}")
    return values


def _decode_us(raw: bytes, tag: Tag) -> int:
    if len(raw) < 2:
        raise TruncatedElement(f"US value for {_tag_label(tag)} shorter than 2 bytes")
    return raw[0] | (raw[1] << 8)


def _decode_date(raw: bytes) -> _dt.date:
    text = _decode_string(raw).strip()
    try:
        return _dt.date(int(text[0:4]), int(text[4:6]), int(text[6:8]))
    except (ValueError, IndexError) as exc:
        raise DicomParseError(f"bad DA value {text!r}") from exc


def _tag_label(tag: Tag) -> str:
    name = _TAG_NAMES.get(tag, "")
    return f"({tag[0]:04X},{tag[1]:04X})" + (f" {name}" if name else "")


def _parse_file_meta(cur: _Cursor) -> str:
    """Parse the group-0002 file meta (always Explicit VR LE); return the
    transfer syntax UID."""
    ts_uid = ""
    while cur.remaining() >= 8:
        mark = cur.pos
        group = cur.u16()
        element = cur.u16()
        cur.pos = mark
        if group != 0x0002:
            break
        tag, raw = _read_element(cur, explicit=True)
        if tag == (0x0002, 0x0010):
            ts_uid = _decode_string(raw)
    if not ts_uid:
        raise DicomParseError("file meta present but no TransferSyntaxUID")
    return ts_uid


def _sniff_explicit(buf: bytes, pos: int) -> bool:
    """Decide Explicit vs Implicit VR for a bare data set by checking whether
    bytes 4..6 of the first element form a known VR code."""
    if pos + 6 > len(buf):
        raise TruncatedElement("byte stream too short to hold a data element")
    return buf[pos + 4 : pos + 6] in _KNOWN_VRS


def parse_dicom_file(data: bytes) -> CtSlice:
    """Parse DICOM bytes into a CtSlice.

    Accepts the standard 128-byte preamble + "DICM" form as well as a bare
    data set. Raises UnsupportedTransferSyntax for anything other than
    Explicit/Implicit VR Little Endian, MissingRequiredTag for absent
    mandatory attributes, and TruncatedElement when a declared length runs
    past the end of the input.
    """
    cur = _Cursor(data)
    explicit: bool
    if len(data) >= 132 and data[128:132] == b"DICM":
        cur.pos = 132
        ts_uid = _parse_file_meta(cur)
        if ts_uid == EXPLICIT_VR_LE:
            explicit = True
        elif ts_uid == IMPLICIT_VR_LE:
            explicit = False
        else:
            raise UnsupportedTransferSyntax(ts_uid)
    else:
        if _sniff_explicit(data, cur.pos):
            explicit = True
        else:
            explicit = False
        # A bare stream may still start with group-0002 meta.
        if len(data) >= cur.pos + 2 and data[cur.pos] == 0x02 and data[cur.pos + 1] == 0x00:
            ts_uid = _parse_file_meta(cur)
            if ts_uid == EXPLICIT_VR_LE:
                explicit = True
            elif ts_uid == IMPLICIT_VR_LE:
                explicit = False
            else:
                raise UnsupportedTransferSyntax(ts_uid)

    elements: dict[Tag, bytes] = {}
    while cur.remaining() > 0:
        if cur.remaining() < 8:
            raise TruncatedElement(
                f"{cur.remaining()} trailing bytes cannot form a data element"
            )
        tag, raw = _read_element(cur, explicit)
        elements[tag] = raw

    return _interpret(elements)


def _require(elements: dict[Tag, bytes], tag: Tag) -> bytes:
    try:
        return elements[tag]
    except KeyError:
        raise MissingRequiredTag(tag, _TAG_NAMES.get(tag, "")) from None


def _interpret(elements: dict[Tag, bytes]) -> CtSlice:
    rows = _decode_us(_require(elements, TAG_ROWS), TAG_ROWS)
    columns = _decode_us(_require(elements, TAG_COLUMNS), TAG_COLUMNS)
    bits_allocated = _decode_us(_require(elements, TAG_BITS_ALLOCATED), TAG_BITS_ALLOCATED)
    _decode_us(_require(elements, TAG_BITS_STORED), TAG_BITS_STORED)
    _decode_us(_require(elements, TAG_HIGH_BIT), TAG_HIGH_BIT)
    pixel_rep = _decode_us(
        _require(elements, TAG_PIXEL_REPRESENTATION), TAG_PIXEL_REPRESENTATION
    )
    if rows < 1 or columns < 1:
        raise UnsupportedPixelFormat(f"degenerate image dimensions {rows}x{columns}")
    if bits_allocated != 16:
        raise UnsupportedPixelFormat(f"BitsAllocated {bits_allocated}, expected 16")
    if pixel_rep not in (0, 1):
        raise UnsupportedPixelFormat(f"PixelRepresentation {pixel_rep}")
    if TAG_SAMPLES_PER_PIXEL in elements:
        spp = _decode_us(elements[TAG_SAMPLES_PER_PIXEL], TAG_SAMPLES_PER_PIXEL)
        if spp != 1:
            raise UnsupportedPixelFormat(f"SamplesPerPixel {spp}, expected 1")

    spacing = _decode_floats(_require(elements, TAG_PIXEL_SPACING), TAG_PIXEL_SPACING, 2)
    if spacing[0] <= 0 or spacing[1] <= 0:
        raise DicomParseError(f"non-positive pixel spacing {spacing}")
    position = _decode_floats(_require(elements, TAG_IMAGE_POSITION), TAG_IMAGE_POSITION, 3)
    orientation = _decode_floats(
        _require(elements, TAG_IMAGE_ORIENTATION), TAG_IMAGE_ORIENTATION, 6
    )
    for triple in (orientation[0:3], orientation[3:6]):
        norm = math.sqrt(sum(c * c for c in triple))
        if abs(norm - 1.0) > 1e-3:
            raise DicomParseError(f"direction cosines {triple} not unit length")

    slope = _decode_floats(_require(elements, TAG_RESCALE_SLOPE), TAG_RESCALE_SLOPE, 1)[0]
    intercept = _decode_floats(
        _require(elements, TAG_RESCALE_INTERCEPT), TAG_RESCALE_INTERCEPT, 1
    )[0]

    raw_pixels = _require(elements, TAG_PIXEL_DATA)
    expected = rows * columns * 2
    if len(raw_pixels) != expected:
        raise UnsupportedPixelFormat(
            f"pixel data holds {len(raw_pixels)} bytes, expected {expected} "
            f"for {rows}x{columns} 16-bit"
        )
    dtype = "<i2" if pixel_rep == 1 else "<u2"
    stored = np.frombuffer(raw_pixels, dtype=dtype).reshape(rows, columns)
    hu = slope * stored.astype(np.float64) + intercept

    thickness = None
    if TAG_SLICE_THICKNESS in elements:
        thickness = _decode_floats(elements[TAG_SLICE_THICKNESS], TAG_SLICE_THICKNESS, 1)[0]
        if thickness <= 0:
            raise DicomParseError(f"non-positive slice thickness {thickness}")
    between = None
    if TAG_SPACING_BETWEEN_SLICES in elements:
        between = _decode_floats(
            elements[TAG_SPACING_BETWEEN_SLICES], TAG_SPACING_BETWEEN_SLICES, 1
        )[0]
    acquisition = None
    if TAG_ACQUISITION_NUMBER in elements and _decode_string(
        elements[TAG_ACQUISITION_NUMBER]
    ).strip():
        acquisition = _decode_int(elements[TAG_ACQUISITION_NUMBER], TAG_ACQUISITION_NUMBER)

    header = SliceHeader(
        patient_id=_decode_string(_require(elements, TAG_PATIENT_ID)),
        study_uid=_decode_string(_require(elements, TAG_STUDY_UID)),
        series_uid=_decode_string(_require(elements, TAG_SERIES_UID)),
        frame_of_reference_uid=_decode_string(_require(elements, TAG_FRAME_OF_REFERENCE)),
        series_number=_decode_int(_require(elements, TAG_SERIES_NUMBER), TAG_SERIES_NUMBER),
        acquisition_number=acquisition,
        instance_number=_decode_int(
            _require(elements, TAG_INSTANCE_NUMBER), TAG_INSTANCE_NUMBER
        ),
        study_date=_decode_date(_require(elements, TAG_STUDY_DATE)),
        series_description=_decode_string(_require(elements, TAG_SERIES_DESCRIPTION)),
        study_description=_decode_string(_require(elements, TAG_STUDY_DESCRIPTION)),
        rows=rows,
        columns=columns,
        pixel_spacing_row_mm=spacing[0],
        pixel_spacing_col_mm=spacing[1],
        slice_thickness_mm=thickness,
        spacing_between_slices_mm=between,
        image_position_mm=position,
        image_orientation=orientation,
        rescale_slope=slope,
        rescale_intercept=intercept,
    )
    hu.setflags(write=False)
    return CtSlice(header=header, hu=hu)


# --- writer ------------------------------------------------------------------


def _encode_string(value: str, pad: bytes = b" ") -> bytes:
    raw = value.encode("ascii")
    if len(raw) % 2:
        raw += pad
    return raw


def _format_ds(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def _element(tag: Tag, vr: bytes, value: bytes, explicit: bool) -> bytes:
    head = tag[0].to_bytes(2, "little") + tag[1].to_bytes(2, "little")
    if explicit:
        if vr in _LONG_VRS:
            return head + vr + b"\x00\x00" + len(value).to_bytes(4, "little") + value
        return head + vr + len(value).to_bytes(2, "little") + value
    return head + len(value).to_bytes(4, "little") + value


def serialize_dicom(ct: CtSlice, transfer_syntax: str = EXPLICIT_VR_LE,
                    pixel_representation: int = 1) -> bytes:
    """Serialize a CtSlice to DICOM bytes (preamble + file meta + data set).

    Stored pixel values are recovered from HU via the inverse rescale map and
    must be integral and in range for the chosen representation; the phantom
    generator guarantees this by construction.
    """
    if transfer_syntax == EXPLICIT_VR_LE:
        explicit = True
    elif transfer_syntax == IMPLICIT_VR_LE:
        explicit = False
    else:
        raise UnsupportedTransferSyntax(transfer_syntax)
    h = ct.header

    stored_f = (np.asarray(ct.hu, dtype=np.float64) - h.rescale_intercept) / h.rescale_slope
    stored_r = np.rint(stored_f)
    if not np.allclose(stored_f, stored_r, atol=1e-6, rtol=0):
        raise UnsupportedPixelFormat("HU values are not representable as stored integers")
    if pixel_representation == 1:
        lo, hi, dtype = -32768, 32767, "<i2"
    elif pixel_representation == 0:
        lo, hi, dtype = 0, 65535, "<u2"
    else:
        raise UnsupportedPixelFormat(f"PixelRepresentation {pixel_representation}")
    if stored_r.min() < lo or stored_r.max() > hi:
        raise UnsupportedPixelFormat("stored values out of range for representation")
    pixel_bytes = stored_r.astype(dtype).tobytes()

    sop_instance = f"{h.series_uid}.{h.instance_number}"
    body: list[bytes] = []

    def put(tag: Tag, vr: bytes, value: bytes) -> None:
        body.append(_element(tag, vr, value, explicit))

    put(TAG_STUDY_DATE, b"DA", _encode_string(h.study_date.strftime("%Y%m%d")))
    put((0x0008, 0x0060), b"CS", _encode_string("CT"))
    put(TAG_STUDY_DESCRIPTION, b"LO", _encode_string(h.study_description))
    put(TAG_SERIES_DESCRIPTION, b"LO", _encode_string(h.series_description))
    put(TAG_PATIENT_ID, b"LO", _encode_string(h.patient_id))
    if h.slice_thickness_mm is not None:
        put(TAG_SLICE_THICKNESS, b"DS", _encode_string(_format_ds(h.slice_thickness_mm)))
    if h.spacing_between_slices_mm is not None:
        put(TAG_SPACING_BETWEEN_SLICES, b"DS",
            _encode_string(_format_ds(h.spacing_between_slices_mm)))
    put(TAG_STUDY_UID, b"UI", _encode_string(h.study_uid, pad=b"\x00"))
    put(TAG_SERIES_UID, b"UI", _encode_string(h.series_uid, pad=b"\x00"))
    put(TAG_SERIES_NUMBER, b"IS", _encode_string(str(h.series_number)))
    if h.acquisition_number is not None:
        put(TAG_ACQUISITION_NUMBER, b"IS", _encode_string(str(h.acquisition_number)))
    put(TAG_INSTANCE_NUMBER, b"IS", _encode_string(str(h.instance_number)))
    put(TAG_IMAGE_POSITION, b"DS",
        _encode_string("\\".join(_format_ds(v) for v in h.image_position_mm)))
    put(TAG_IMAGE_ORIENTATION, b"DS",
        _encode_string("\\".join(_format_ds(v) for v in h.image_orientation)))
    put(TAG_FRAME_OF_REFERENCE, b"UI", _encode_string(h.frame_of_reference_uid, pad=b"\x00"))
    put(TAG_SAMPLES_PER_PIXEL, b"US", (1).to_bytes(2, "little"))
    put((0x0028, 0x0004), b"CS", _encode_string("MONOCHROME2"))
    put(TAG_ROWS, b"US", h.rows.to_bytes(2, "little"))
    put(TAG_COLUMNS, b"US", h.columns.to_bytes(2, "little"))
    put(TAG_PIXEL_SPACING, b"DS",
        _encode_string(f"{_format_ds(h.pixel_spacing_row_mm)}\\{_format_ds(h.pixel_spacing_col_mm)}"))
    put(TAG_BITS_ALLOCATED, b"US", (16).to_bytes(2, "little"))
    put(TAG_BITS_STORED, b"US", (16).to_bytes(2, "little"))
    put(TAG_HIGH_BIT, b"US", (15).to_bytes(2, "little"))
    put(TAG_PIXEL_REPRESENTATION, b"US", pixel_representation.to_bytes(2, "little"))
    put(TAG_RESCALE_INTERCEPT, b"DS", _encode_string(_format_ds(h.rescale_intercept)))
    put(TAG_RESCALE_SLOPE, b"DS", _encode_string(_format_ds(h.rescale_slope)))
    put(TAG_PIXEL_DATA, b"OW", pixel_bytes)

    meta_items = [
        _element((0x0002, 0x0001), b"OB", b"\x00\x01", True),
        _element((0x0002, 0x0002), b"UI", _encode_string(CT_IMAGE_STORAGE, pad=b"\x00"), True),
        _element((0x0002, 0x0003), b"UI", _encode_string(sop_instance, pad=b"\x00"), True),
        _element((0x0002, 0x0010), b"UI", _encode_string(transfer_syntax, pad=b"\x00"), True),
    ]
    meta_body = b"".join(meta_items)
    group_length = _element(
        (0x0002, 0x0000), b"UL", len(meta_body).to_bytes(4, "little"), True
    )

    return b"\x00" * 128 + b"DICM" + group_length + meta_body + b"".join(body)

import datetime

import numpy as np
import pytest

from ctbodycomp.dicom import CtSlice, SliceHeader

AXIAL = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def make_header(**overrides) -> SliceHeader:
    fields = dict(
        patient_id="P001",
        study_uid="1.2.840.1.1",
        series_uid="1.2.840.1.1.2",
        frame_of_reference_uid="1.2.840.1.1.0",
        series_number=2,
        acquisition_number=1,
        instance_number=1,
        study_date=datetime.date(2024, 3, 1),
        series_description="Axial venous phase",
        study_description="CT abdomen",
        rows=4,
        columns=4,
        pixel_spacing_row_mm=0.8,
        pixel_spacing_col_mm=0.8,
        slice_thickness_mm=5.0,
        spacing_between_slices_mm=5.0,
        image_position_mm=(0.0, 0.0, 0.0),
        image_orientation=AXIAL,
        rescale_slope=1.0,
        rescale_intercept=-1024.0,
    )
    fields.update(overrides)
    return SliceHeader(**fields)


def make_slice(hu=None, **overrides) -> CtSlice:
    header = make_header(**overrides)
    if hu is None:
        hu = np.zeros((header.rows, header.columns))
    return CtSlice(header=header, hu=np.asarray(hu, dtype=np.float64))


@pytest.fixture
def header():
    return make_header()


@pytest.fixture
def ct_slice():
    return make_slice()

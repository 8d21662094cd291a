import json

import numpy as np
import pytest

from ctbodycomp.errors import (
    BadMagic,
    DimensionMismatch,
    LabelAbsent,
    NiftiParseError,
    TruncatedVolume,
    UnsupportedDatatype,
)
from ctbodycomp.nifti import LabelVolume, parse_nifti_labels, serialize_nifti_labels
from ctbodycomp.vertebra import (
    averaging_window,
    l3_range_from_sidecar,
    l3_slice_range,
    mid_slice_index,
    select_l3,
)


def volume_with_l3(slices, nz=60, label=29):
    voxels = np.zeros((4, 4, nz), dtype=np.uint8)
    for z in slices:
        voxels[1, 2, z] = label
    return LabelVolume(dims=voxels.shape, voxels=voxels, affine=np.eye(4))


class TestNiftiParsing:
    def test_all_zero_volume(self):
        vol = LabelVolume(dims=(2, 2, 2), voxels=np.zeros((2, 2, 2), np.uint8),
                          affine=np.diag([1.0, 1.0, 5.0, 1.0]))
        back = parse_nifti_labels(serialize_nifti_labels(vol))
        assert back.dims == (2, 2, 2)
        assert not back.voxels.any()

    def test_label_slices_recovered(self):
        vol = volume_with_l3(range(10, 15))
        back = parse_nifti_labels(serialize_nifti_labels(vol))
        assert l3_slice_range(back) == list(range(10, 15))

    def test_gzip_wrapped_identical(self):
        vol = volume_with_l3(range(10, 15))
        plain = parse_nifti_labels(serialize_nifti_labels(vol, gzipped=False))
        zipped = parse_nifti_labels(serialize_nifti_labels(vol, gzipped=True))
        assert np.array_equal(plain.voxels, zipped.voxels)
        assert np.allclose(plain.affine, zipped.affine)

    def test_int16_and_uint16_datatypes(self):
        for dtype in (np.int16, np.uint16):
            vox = np.zeros((3, 3, 3), dtype=dtype)
            vox[0, 0, 1] = 29
            vol = LabelVolume(dims=(3, 3, 3), voxels=vox, affine=np.eye(4))
            back = parse_nifti_labels(serialize_nifti_labels(vol))
            assert back.voxels[0, 0, 1] == 29

    def test_bad_magic(self):
        blob = bytearray(serialize_nifti_labels(volume_with_l3([1], nz=3)))
        blob[344:348] = b"XXXX"
        with pytest.raises(BadMagic):
            parse_nifti_labels(bytes(blob))

    def test_unsupported_datatype(self):
        blob = bytearray(serialize_nifti_labels(volume_with_l3([1], nz=3)))
        blob[70:72] = (16).to_bytes(2, "little")  # float32
        with pytest.raises(UnsupportedDatatype):
            parse_nifti_labels(bytes(blob))

    def test_bad_dim0(self):
        blob = bytearray(serialize_nifti_labels(volume_with_l3([1], nz=3)))
        blob[40:42] = (5).to_bytes(2, "little")
        with pytest.raises(DimensionMismatch):
            parse_nifti_labels(bytes(blob))

    def test_truncated_payload(self):
        blob = serialize_nifti_labels(volume_with_l3([1], nz=3))
        with pytest.raises(TruncatedVolume):
            parse_nifti_labels(blob[:-5])

    def test_truncated_gzip(self):
        blob = serialize_nifti_labels(volume_with_l3([1], nz=3), gzipped=True)
        with pytest.raises(TruncatedVolume):
            parse_nifti_labels(blob[:-7])

    def test_qform_fallback(self):
        import struct

        blob = bytearray(serialize_nifti_labels(volume_with_l3([1], nz=3)))
        struct.pack_into("<h", blob, 254, 0)  # clear sform
        struct.pack_into("<h", blob, 252, 1)  # identity quaternion qform
        struct.pack_into("<3f", blob, 256, 0.0, 0.0, 0.0)
        struct.pack_into("<3f", blob, 268, 7.0, -2.0, 4.0)
        vol = parse_nifti_labels(bytes(blob))
        assert np.allclose(vol.affine[:3, 3], (7.0, -2.0, 4.0))
        assert np.allclose(vol.affine[:3, :3], np.diag([1.0, 1.0, 1.0]))


class TestL3Range:
    def test_contiguous_range(self):
        assert l3_slice_range(volume_with_l3(range(40, 53))) == list(range(40, 53))

    def test_longest_run_wins(self):
        assert l3_slice_range(volume_with_l3([40, 41, 43, 44, 45])) == [43, 44, 45]

    def test_tie_goes_inferior(self):
        assert l3_slice_range(volume_with_l3([10, 11, 20, 21])) == [10, 11]

    def test_label_absent(self):
        with pytest.raises(LabelAbsent):
            l3_slice_range(volume_with_l3([]))

    def test_custom_label(self):
        vol = volume_with_l3([5, 6], label=30)
        with pytest.raises(LabelAbsent):
            l3_slice_range(vol)
        assert l3_slice_range(vol, l3_label=30) == [5, 6]

    def test_sidecar(self):
        assert l3_range_from_sidecar(json.dumps({"l3_slices": [4, 5, 6]})) == [4, 5, 6]
        assert l3_range_from_sidecar(json.dumps({"l3_slices": [9, 1, 2]})) == [1, 2]
        with pytest.raises(NiftiParseError):
            l3_range_from_sidecar("{}")
        with pytest.raises(LabelAbsent):
            l3_range_from_sidecar(json.dumps({"l3_slices": []}))


class TestMidSliceRules:
    @pytest.mark.parametrize("count,expected", [(12, 5), (20, 8), (33, 13)])
    def test_published_examples(self, count, expected):
        assert mid_slice_index(count) == expected

    def test_exhaustive_against_rule_transcription(self):
        for count in range(1, 101):
            if count <= 12:
                raw = count // 2 - 1
            elif count <= 32:
                raw = count // 2 - 2
            else:
                raw = count // 2 - 3
            assert mid_slice_index(count) == min(max(raw, 0), count - 1)

    def test_monotone_within_each_rule_band(self):
        # The published formulas drop by one at the 12->13 and 32->33
        # boundaries, so monotonicity only holds inside each band.
        for band in (range(1, 13), range(13, 33), range(33, 200)):
            values = [mid_slice_index(c) for c in band]
            assert all(b >= a for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize(
        "count,mid,expected",
        [(20, 8, [6, 7, 8, 9, 10]), (10, 4, [3, 4, 5]), (3, 0, [0, 1])],
    )
    def test_window_examples(self, count, mid, expected):
        assert averaging_window(count, mid) == expected

    def test_window_contains_mid_and_bounded(self):
        for count in range(1, 80):
            mid = mid_slice_index(count)
            window = averaging_window(count, mid)
            assert mid in window
            assert 1 <= len(window) <= 5
            assert all(0 <= i < count for i in window)

    def test_select_l3_modes(self):
        indices = list(range(40, 53))  # 13 slices
        mid_sel = select_l3(indices, "mid_l3")
        assert mid_sel.mid_index == indices[mid_slice_index(13)]
        assert mid_sel.window_indices == [indices[i] for i in averaging_window(13, 4)]
        end_sel = select_l3(indices, "end_l3")
        assert end_sel.mid_index == 52

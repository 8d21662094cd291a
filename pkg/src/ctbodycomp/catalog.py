"""Series cataloging: orientation classing, grouping, and anatomical sort.

Slices are grouped by (study, series, frame of reference, acquisition,
slice thickness) and ordered by the projection of the image position onto
the slice normal; instance number only breaks ties. A group is axial when
its normal lies within ~25 degrees of the patient z axis (|n.z| >= 0.9).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .dicom import CtSlice
from .errors import ConflictingGeometry, DegenerateOrientation, EmptyInput

AXIAL_NORMAL_THRESHOLD = 0.9

GroupKey = tuple[str, str, str, int | None, float | None]


def _cross(a: tuple[float, float, float], b: tuple[float, float, float]):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def slice_normal(orientation: tuple[float, ...]) -> tuple[float, float, float]:
    """Unit normal of the slice plane (row cosines x column cosines)."""
    row, col = orientation[0:3], orientation[3:6]
    for triple in (row, col):
        norm = math.sqrt(sum(c * c for c in triple))
        if abs(norm - 1.0) > 1e-3:
            raise ValueError(f"direction cosines {triple} not unit length")
    n = _cross(row, col)
    norm = math.sqrt(sum(c * c for c in n))
    if norm < 1e-6:
        raise DegenerateOrientation(f"parallel direction cosines in {orientation}")
    return (n[0] / norm, n[1] / norm, n[2] / norm)


def classify_orientation(orientation: tuple[float, ...]) -> str:
    """'axial' when the slice normal is close enough to the z axis."""
    normal = slice_normal(orientation)
    return "axial" if abs(normal[2]) >= AXIAL_NORMAL_THRESHOLD else "non_axial"


@dataclass
class SeriesGroup:
    key: GroupKey
    slices: list[CtSlice]
    view: str
    normal: tuple[float, float, float]

    @property
    def series_uid(self) -> str:
        return self.key[1]

    @property
    def description(self) -> str:
        return self.slices[0].header.series_description

    def positions(self) -> list[float]:
        """Projection of each slice position onto the group normal."""
        return [
            sum(p * n for p, n in zip(s.header.image_position_mm, self.normal))
            for s in self.slices
        ]


@dataclass
class SeriesCatalog:
    series: list[SeriesGroup] = field(default_factory=list)

    def axial_groups(self) -> list[SeriesGroup]:
        return [g for g in self.series if g.view == "axial"]


def _geometry_signature(s: CtSlice) -> tuple:
    h = s.header
    return (
        h.rows,
        h.columns,
        round(h.pixel_spacing_row_mm, 6),
        round(h.pixel_spacing_col_mm, 6),
        tuple(round(c, 4) for c in h.image_orientation),
    )


def build_catalog(slices: list[CtSlice]) -> SeriesCatalog:
    """Group and sort slices into a SeriesCatalog.

    Key-equal slices with differing pixel geometry are split into separate
    groups rather than merged, unless the same instance numbers recur across
    geometries (one instance sequence mixing geometries), which raises
    ConflictingGeometry. Duplicate positions within a group keep a
    deterministic order via the instance-number tie-break.
    """
    if not slices:
        raise EmptyInput("no slices to catalog")

    keyed: dict[GroupKey, dict[tuple, list[CtSlice]]] = {}
    for s in slices:
        h = s.header
        key: GroupKey = (
            h.study_uid,
            h.series_uid,
            h.frame_of_reference_uid,
            h.acquisition_number,
            h.slice_thickness_mm,
        )
        keyed.setdefault(key, {}).setdefault(_geometry_signature(s), []).append(s)

    groups: list[SeriesGroup] = []
    for key in sorted(keyed, key=lambda k: (k[0], k[1], str(k[3]), str(k[4]))):
        by_signature = keyed[key]
        if len(by_signature) > 1:
            seen: set[int] = set()
            for members in by_signature.values():
                numbers = {s.header.instance_number for s in members}
                if seen & numbers:
                    raise ConflictingGeometry(
                        key[1], "same instance numbers span different pixel geometries"
                    )
                seen |= numbers
        for signature in sorted(by_signature, key=str):
            members = by_signature[signature]
            normal = slice_normal(members[0].header.image_orientation)
            view = "axial" if abs(normal[2]) >= AXIAL_NORMAL_THRESHOLD else "non_axial"
            ordered = sorted(
                members,
                key=lambda s: (
                    sum(p * n for p, n in zip(s.header.image_position_mm, normal)),
                    s.header.instance_number,
                ),
            )
            groups.append(SeriesGroup(key=key, slices=ordered, view=view, normal=normal))
    return SeriesCatalog(series=groups)


def choose_series(catalog: SeriesCatalog, pattern: str = "venous") -> SeriesGroup:
    """Pick the axial group to segment: case-insensitive description match
    first, then the group with the most slices; series number breaks ties."""
    axial = catalog.axial_groups()
    if not axial:
        raise EmptyInput("catalog holds no axial series")
    needle = pattern.lower()
    matching = [g for g in axial if needle and needle in g.description.lower()]
    pool = matching or axial
    return max(
        pool,
        key=lambda g: (
            len(g.slices),
            -g.slices[0].header.series_number,
            g.series_uid,
        ),
    )

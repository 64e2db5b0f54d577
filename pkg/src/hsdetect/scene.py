"""Named rectangular regions, ground-truth masks, and flattened pixel tables.

Region coordinates are absolute (relative to the original full scene) so that
chained crops and mask alignment compose without drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envi_io import SpectralCube
from .errors import ValidationError


@dataclass(frozen=True)
class Region:
    name: str
    line_offset: int
    sample_offset: int
    lines: int
    samples: int

    def __post_init__(self):
        if self.line_offset < 0 or self.sample_offset < 0:
            raise ValidationError(f"region '{self.name}': offsets must be >= 0")
        if self.lines <= 0 or self.samples <= 0:
            raise ValidationError(f"region '{self.name}': extents must be positive")

    def contains(self, other: "Region") -> bool:
        return (
            other.line_offset >= self.line_offset
            and other.sample_offset >= self.sample_offset
            and other.line_offset + other.lines <= self.line_offset + self.lines
            and other.sample_offset + other.samples <= self.sample_offset + self.samples
        )

    def same_extent(self, other: "Region") -> bool:
        return (
            self.line_offset == other.line_offset
            and self.sample_offset == other.sample_offset
            and self.lines == other.lines
            and self.samples == other.samples
        )


def region_of(obj) -> Region:
    """The region an object is aligned to; full-extent-at-origin if unset."""
    region = getattr(obj, "region", None)
    if region is not None:
        return region
    return Region("full", 0, 0, obj.values.shape[0], obj.values.shape[1])


@dataclass
class GroundTruthMask:
    """Binary per-pixel labels (1 target, 0 background) aligned to a region."""

    region: Region
    labels: np.ndarray
    positive_count: int = field(init=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.shape != (self.region.lines, self.region.samples):
            raise ValidationError(
                f"mask shape {self.labels.shape} does not match region "
                f"{self.region.lines}x{self.region.samples}"
            )
        bad = np.setdiff1d(np.unique(self.labels), [0, 1])
        if bad.size:
            raise ValidationError(f"mask contains invalid label values {bad.tolist()}")
        self.labels = self.labels.astype(np.uint8)
        self.positive_count = int(self.labels.sum())


@dataclass
class PixelTable:
    """Flattened (N, bands) view of a region, line-major row order."""

    spectra: np.ndarray
    region: Region
    line_index: np.ndarray
    sample_index: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self):
        return self.spectra.shape[0]

    @property
    def bands(self) -> int:
        return self.spectra.shape[1]


def crop(cube: SpectralCube, region: Region) -> SpectralCube:
    """Crop a cube to a region given in absolute coordinates, keeping all bands."""
    parent = region_of(cube)
    if not parent.contains(region):
        raise ValidationError(
            f"region '{region.name}' at ({region.line_offset},{region.sample_offset}) "
            f"size {region.lines}x{region.samples} does not fit inside "
            f"'{parent.name}' at ({parent.line_offset},{parent.sample_offset}) "
            f"size {parent.lines}x{parent.samples}"
        )
    l0 = region.line_offset - parent.line_offset
    s0 = region.sample_offset - parent.sample_offset
    values = np.ascontiguousarray(
        cube.values[l0:l0 + region.lines, s0:s0 + region.samples, :]
    )
    return SpectralCube(header=cube.header, values=values, region=region,
                        nonfinite_count=int(np.count_nonzero(~np.isfinite(values))))


def crop_mask(mask: GroundTruthMask, region: Region) -> GroundTruthMask:
    """Align a mask to a sub-region of the region it covers."""
    parent = mask.region
    if not parent.contains(region):
        raise ValidationError(
            f"region '{region.name}' does not fit inside mask region '{parent.name}'"
        )
    l0 = region.line_offset - parent.line_offset
    s0 = region.sample_offset - parent.sample_offset
    labels = mask.labels[l0:l0 + region.lines, s0:s0 + region.samples]
    return GroundTruthMask(region=region, labels=labels.copy())


def split_train_test(region: Region, boundary_sample: int,
                     names=("train", "test")) -> tuple[Region, Region]:
    """Split a region at a sample boundary into disjoint left/right regions.

    The left region spans samples [0, boundary) of the parent, the right
    spans [boundary, samples); together they cover the parent exactly, so a
    model fit on one side never sees the other.
    """
    if not 0 < boundary_sample < region.samples:
        raise ValidationError(
            f"boundary sample {boundary_sample} outside open interval "
            f"(0, {region.samples})"
        )
    left = Region(names[0], region.line_offset, region.sample_offset,
                  region.lines, boundary_sample)
    right = Region(names[1], region.line_offset,
                   region.sample_offset + boundary_sample,
                   region.lines, region.samples - boundary_sample)
    return left, right


def flatten(cube: SpectralCube, mask: GroundTruthMask | None = None) -> PixelTable:
    """Flatten a cube to an (N, bands) table, rows in line-major order."""
    region = region_of(cube)
    nl, ns, nb = cube.values.shape
    spectra = cube.values.reshape(nl * ns, nb)
    line_index = np.repeat(np.arange(nl), ns)
    sample_index = np.tile(np.arange(ns), nl)
    labels = None
    if mask is not None:
        if not mask.region.same_extent(region):
            raise ValidationError(
                f"mask region '{mask.region.name}' "
                f"({mask.region.lines}x{mask.region.samples}) is not aligned to "
                f"cube region '{region.name}' ({nl}x{ns})"
            )
        labels = mask.labels.reshape(nl * ns).copy()
    return PixelTable(spectra=spectra, region=region, line_index=line_index,
                      sample_index=sample_index, labels=labels)


def load_presets(path) -> dict[str, Region]:
    """Parse a region-preset file.

    One region per line: `name = line_offset, sample_offset, lines, samples`.
    Blank lines and `#` comments are ignored.
    """
    presets: dict[str, Region] = {}
    with open(path, "r") as f:
        for i, raw in enumerate(f):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}: line {i + 1}: expected 'name = ...'")
            name, _, rest = line.partition("=")
            name = name.strip()
            parts = [tok.strip() for tok in rest.split(",")]
            if len(parts) != 4:
                raise ValidationError(
                    f"{path}: line {i + 1}: expected 4 comma-separated values"
                )
            try:
                lo, so, nl, ns = (int(tok) for tok in parts)
            except ValueError:
                raise ValidationError(
                    f"{path}: line {i + 1}: non-integer region field"
                ) from None
            presets[name] = Region(name, lo, so, nl, ns)
    return presets

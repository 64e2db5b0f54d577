"""ENVI-format I/O: headers, cubes, score maps, byte masks, signature CSVs.

Cubes are held in memory as float64 arrays indexed (line, sample, band) with
pixel spectra contiguous, regardless of the on-disk interleave. Values are
copied verbatim (no radiometric rescaling); whether they are radiance or
reflectance is up to the producer and treated as opaque here.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import ValidationError

if TYPE_CHECKING:
    from .scene import GroundTruthMask, Region

# ENVI numeric type codes supported by this reader.
DTYPE_CODES = {
    1: np.dtype(np.uint8),
    2: np.dtype(np.int16),
    4: np.dtype(np.float32),
    5: np.dtype(np.float64),
    12: np.dtype(np.uint16),
}

INTERLEAVES = ("bsq", "bil", "bip")

_REQUIRED = ("samples", "lines", "bands", "data type", "interleave", "byte order")


@dataclass
class EnviHeader:
    """Parsed ENVI header. Unknown keys are kept verbatim in `extra` so a
    parse/format round trip preserves them."""

    samples: int
    lines: int
    bands: int
    data_type: int
    interleave: str
    byte_order: int
    header_offset: int = 0
    wavelengths: list[float] | None = None
    extra: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.samples <= 0 or self.lines <= 0 or self.bands <= 0:
            raise ValidationError(
                "header dimensions must be positive, got "
                f"samples={self.samples} lines={self.lines} bands={self.bands}"
            )
        if self.data_type not in DTYPE_CODES:
            raise ValidationError(
                f"unsupported data type code {self.data_type} "
                f"(supported: {sorted(DTYPE_CODES)})"
            )
        if self.interleave not in INTERLEAVES:
            raise ValidationError(f"unsupported interleave '{self.interleave}'")
        if self.byte_order not in (0, 1):
            raise ValidationError(f"byte order must be 0 or 1, got {self.byte_order}")
        if self.header_offset < 0:
            raise ValidationError("header offset must be non-negative")
        if self.wavelengths is not None:
            if len(self.wavelengths) != self.bands:
                raise ValidationError(
                    f"wavelength list has {len(self.wavelengths)} entries, "
                    f"expected {self.bands}"
                )
            w = np.asarray(self.wavelengths, dtype=np.float64)
            if not np.all(np.diff(w) > 0):
                raise ValidationError("wavelengths must be strictly increasing")

    @property
    def dtype(self) -> np.dtype:
        dt = DTYPE_CODES[self.data_type]
        return dt.newbyteorder(">" if self.byte_order == 1 else "<")

    @property
    def raster_size(self) -> int:
        """Expected raster file size in bytes, header offset included."""
        return (
            self.samples * self.lines * self.bands * self.dtype.itemsize
            + self.header_offset
        )


@dataclass
class SpectralCube:
    """Dense cube of pixel spectra, values float64, axes (line, sample, band).

    `region` records the cube's placement in absolute scene coordinates; None
    means "at the origin of its own coordinate system" (a freshly loaded
    full-file cube).
    """

    header: EnviHeader
    values: np.ndarray
    region: "Region | None" = None
    nonfinite_count: int = 0

    @property
    def lines(self) -> int:
        return self.values.shape[0]

    @property
    def samples(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]


def parse_header(text: str) -> EnviHeader:
    """Parse an ENVI header from its text contents.

    Keys are case-insensitive; `{...}` brace lists may span lines. Unknown
    keys are preserved for round-trip writing.
    """
    entries: dict[str, str] = {}
    pending_key: str | None = None
    pending_parts: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if pending_key is not None:
            pending_parts.append(line)
            if "}" in line:
                entries[pending_key] = " ".join(pending_parts)
                pending_key = None
                pending_parts = []
            continue
        if not line or line.lower() == "envi" or line.startswith(";"):
            continue
        if "=" not in line:
            continue
        key, _, value = line.partition("=")
        key = " ".join(key.strip().lower().split())
        value = value.strip()
        if value.startswith("{") and "}" not in value:
            pending_key = key
            pending_parts = [value]
        else:
            entries[key] = value
    if pending_key is not None:
        raise ValidationError(f"malformed brace list for key '{pending_key}'")

    for req in _REQUIRED:
        if req not in entries:
            raise ValidationError(f"missing required header key '{req}'")

    def _int(key: str) -> int:
        try:
            return int(entries[key])
        except ValueError:
            raise ValidationError(
                f"header key '{key}' is not an integer: {entries[key]!r}"
            ) from None

    samples = _int("samples")
    lines = _int("lines")
    bands = _int("bands")
    data_type = _int("data type")
    byte_order = _int("byte order")
    interleave = entries["interleave"].lower()
    header_offset = _int("header offset") if "header offset" in entries else 0

    wavelengths = None
    if "wavelength" in entries:
        wavelengths = _parse_float_list("wavelength", entries["wavelength"])

    known = set(_REQUIRED) | {"header offset", "wavelength"}
    extra = {k: v for k, v in entries.items() if k not in known}
    return EnviHeader(
        samples=samples,
        lines=lines,
        bands=bands,
        data_type=data_type,
        interleave=interleave,
        byte_order=byte_order,
        header_offset=header_offset,
        wavelengths=wavelengths,
        extra=extra,
    )


def _parse_float_list(key: str, value: str) -> list[float]:
    body = value.strip()
    if not (body.startswith("{") and body.endswith("}")):
        raise ValidationError(f"malformed brace list for key '{key}'")
    body = body[1:-1]
    try:
        return [float(tok) for tok in body.split(",") if tok.strip()]
    except ValueError:
        raise ValidationError(f"non-numeric entry in brace list '{key}'") from None


def format_header(header: EnviHeader) -> str:
    """Render a header back to ENVI text, unknown keys included."""
    lines = ["ENVI"]
    lines.append(f"samples = {header.samples}")
    lines.append(f"lines = {header.lines}")
    lines.append(f"bands = {header.bands}")
    lines.append(f"data type = {header.data_type}")
    lines.append(f"interleave = {header.interleave}")
    lines.append(f"byte order = {header.byte_order}")
    if header.header_offset:
        lines.append(f"header offset = {header.header_offset}")
    if header.wavelengths is not None:
        body = ", ".join(repr(float(w)) for w in header.wavelengths)
        lines.append("wavelength = {" + body + "}")
    for key, value in header.extra.items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def read_header(path) -> EnviHeader:
    with open(path, "r") as f:
        return parse_header(f.read())


def _raster_array(header: EnviHeader, raster):
    """Map the raster source to a flat array without copying more than needed.

    `raster` may be a filesystem path, a bytes object, or a binary file-like.
    Paths are memory-mapped so windowed reads only touch the pages they need.
    """
    if isinstance(raster, (str, os.PathLike)):
        actual = os.path.getsize(raster)
        if actual != header.raster_size:
            raise ValidationError(
                f"raster size {actual} does not match header "
                f"(expected {header.raster_size})"
            )
        return np.memmap(raster, dtype=header.dtype, mode="r",
                         offset=header.header_offset)
    if isinstance(raster, (bytes, bytearray, memoryview)):
        data = bytes(raster)
    else:
        data = raster.read()
    if len(data) != header.raster_size:
        raise ValidationError(
            f"raster size {len(data)} does not match header "
            f"(expected {header.raster_size})"
        )
    return np.frombuffer(data[header.header_offset:], dtype=header.dtype)


def read_cube(header: EnviHeader, raster, window=None) -> SpectralCube:
    """Read a cube (or a rectangular window of one) to the canonical layout.

    window: ((line_start, line_stop), (sample_start, sample_stop)), half-open,
    or None for the full extent. Only the bytes belonging to the window are
    touched when `raster` is a path.
    """
    flat = _raster_array(header, raster)
    nl, ns, nb = header.lines, header.samples, header.bands
    if window is None:
        (l0, l1), (s0, s1) = (0, nl), (0, ns)
    else:
        (l0, l1), (s0, s1) = window
        if not (0 <= l0 < l1 <= nl and 0 <= s0 < s1 <= ns):
            raise ValidationError(
                f"window lines [{l0},{l1}) samples [{s0},{s1}) outside "
                f"cube extent {nl}x{ns}"
            )
    if header.interleave == "bsq":
        view = flat.reshape(nb, nl, ns)[:, l0:l1, s0:s1].transpose(1, 2, 0)
    elif header.interleave == "bil":
        view = flat.reshape(nl, nb, ns)[l0:l1, :, s0:s1].transpose(0, 2, 1)
    else:  # bip
        view = flat.reshape(nl, ns, nb)[l0:l1, s0:s1, :]
    values = np.ascontiguousarray(view, dtype=np.float64)
    nonfinite = int(np.count_nonzero(~np.isfinite(values)))

    from .scene import Region

    region = Region("window" if window else "full", l0, s0, l1 - l0, s1 - s0)
    return SpectralCube(header=header, values=values, region=region,
                        nonfinite_count=nonfinite)


def _interleave_bytes(values: np.ndarray, interleave: str, dtype: np.dtype) -> bytes:
    """Serialize (line, sample, band) values to raw raster bytes."""
    if interleave == "bsq":
        arr = values.transpose(2, 0, 1)
    elif interleave == "bil":
        arr = values.transpose(0, 2, 1)
    elif interleave == "bip":
        arr = values
    else:
        raise ValidationError(f"unsupported interleave '{interleave}'")
    return np.ascontiguousarray(arr).astype(dtype, copy=False).tobytes()


def atomic_write_bytes(path, data: bytes):
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_cube(cube: SpectralCube, header_path, raster_path,
               interleave: str = "bsq", byte_order: int = 0,
               data_type: int = 4):
    """Write a cube in any interleave/byte order. Values are cast to the
    requested ENVI data type."""
    dt = DTYPE_CODES.get(data_type)
    if dt is None:
        raise ValidationError(f"unsupported data type code {data_type}")
    dt = dt.newbyteorder(">" if byte_order == 1 else "<")
    header = EnviHeader(
        samples=cube.samples,
        lines=cube.lines,
        bands=cube.bands,
        data_type=data_type,
        interleave=interleave,
        byte_order=byte_order,
        wavelengths=cube.header.wavelengths if cube.header else None,
        extra=dict(cube.header.extra) if cube.header else {},
    )
    atomic_write_bytes(raster_path, _interleave_bytes(cube.values, interleave, dt))
    atomic_write_text(header_path, format_header(header))


def write_scoremap(scores, header_path, raster_path):
    """Write a score map as a single-band float32 BSQ little-endian image.

    Rejects non-finite values before any bytes hit disk.
    """
    arr = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"score map must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("score map contains non-finite values")
    header = EnviHeader(
        samples=arr.shape[1], lines=arr.shape[0], bands=1,
        data_type=4, interleave="bsq", byte_order=0,
    )
    raw = arr.astype("<f4").tobytes()
    atomic_write_bytes(raster_path, raw)
    atomic_write_text(header_path, format_header(header))


def read_scoremap(header: EnviHeader, raster) -> np.ndarray:
    """Read a single-band score image back as a float64 (lines, samples) array."""
    if header.bands != 1:
        raise ValidationError(f"score map must have 1 band, got {header.bands}")
    cube = read_cube(header, raster)
    return cube.values[:, :, 0]


def read_mask(header: EnviHeader, raster) -> "GroundTruthMask":
    """Read a binary ground-truth mask (single band, unsigned 8-bit, {0,1})."""
    if header.bands != 1:
        raise ValidationError(f"mask must have 1 band, got {header.bands}")
    if header.data_type != 1:
        raise ValidationError(
            f"mask must be data type 1 (unsigned 8-bit), got {header.data_type}"
        )
    flat = _raster_array(header, raster)
    labels = np.asarray(flat.reshape(header.lines, header.samples))
    bad = np.setdiff1d(np.unique(labels), [0, 1])
    if bad.size:
        raise ValidationError(f"mask contains invalid label values {bad.tolist()}")

    from .scene import GroundTruthMask, Region

    region = Region("mask", 0, 0, header.lines, header.samples)
    return GroundTruthMask(region=region, labels=labels.astype(np.uint8))


def write_mask(mask, header_path, raster_path):
    labels = np.asarray(getattr(mask, "labels", mask))
    bad = np.setdiff1d(np.unique(labels), [0, 1])
    if bad.size:
        raise ValidationError(f"mask contains invalid label values {bad.tolist()}")
    header = EnviHeader(
        samples=labels.shape[1], lines=labels.shape[0], bands=1,
        data_type=1, interleave="bsq", byte_order=0,
    )
    atomic_write_bytes(raster_path, labels.astype(np.uint8).tobytes())
    atomic_write_text(header_path, format_header(header))


def read_signature(path, expected_bands: int | None = None):
    """Load a target signature from CSV: one value per line, or two columns
    `wavelength,value`. A single non-numeric first line is tolerated as a
    column header."""
    values = []
    with open(path, "r") as f:
        for i, raw in enumerate(f):
            line = raw.strip()
            if not line:
                continue
            fields = [tok.strip() for tok in line.split(",")]
            if len(fields) not in (1, 2):
                raise ValidationError(
                    f"{path}: line {i + 1}: expected 1 or 2 columns, "
                    f"got {len(fields)}"
                )
            try:
                values.append(float(fields[-1]))
            except ValueError:
                if i == 0:
                    continue  # header row
                raise ValidationError(
                    f"{path}: line {i + 1}: non-numeric value {fields[-1]!r}"
                ) from None
    if expected_bands is not None and len(values) != expected_bands:
        raise ValidationError(
            f"{path}: signature has {len(values)} values, expected "
            f"{expected_bands} (one per band)"
        )

    from .background import Signature

    return Signature(values=np.asarray(values, dtype=np.float64),
                     label=os.path.basename(os.fspath(path)))


def write_signature(signature, path, wavelengths=None):
    values = np.asarray(getattr(signature, "values", signature), dtype=np.float64)
    rows = []
    if wavelengths is not None:
        if len(wavelengths) != len(values):
            raise ValidationError("wavelength column length mismatch")
        for w, v in zip(wavelengths, values):
            rows.append(f"{float(w)!r},{float(v)!r}")
    else:
        rows = [repr(float(v)) for v in values]
    atomic_write_text(path, "\n".join(rows) + "\n")

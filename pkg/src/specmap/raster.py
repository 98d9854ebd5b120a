"""Calibrated multispectral raster model, flat-binary I/O and strip streaming.

The on-disk format is a plain-text sidecar header (``key = value`` lines,
``//`` comments) next to a raw little-endian band-sequential payload with the
same stem and a ``.bin`` suffix.  Samples are calibrated to reflectance in
[0, 1] at read time; the original storage encoding is remembered so that
``write_image(read_image(p))`` is byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DimensionMismatchError,
    FormatError,
    TruncatedFileError,
)

_DTYPES = {
    "u8": np.dtype("<u1"),
    "u16": np.dtype("<u2"),
    "u32": np.dtype("<u4"),
    "i16": np.dtype("<i2"),
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
}


def _dtype_for(name: str) -> np.dtype:
    try:
        return _DTYPES[name]
    except KeyError:
        raise FormatError(f"unknown sample type {name!r}") from None


def default_gain(dtype_name: str) -> float:
    """Scale that maps a full-range integer sample onto [0, 1]."""
    dt = _dtype_for(dtype_name)
    if dt.kind in "ui":
        return 1.0 / float(np.iinfo(dt).max)
    return 1.0


@dataclass(frozen=True)
class BandMetadata:
    band_id: int
    center_wavelength: float  # micrometers
    gain: float = 1.0
    offset: float = 0.0
    nodata_value: float | None = None

    def __post_init__(self):
        if not self.center_wavelength > 0:
            raise ConfigError(
                f"band {self.band_id}: center wavelength must be > 0, "
                f"got {self.center_wavelength}"
            )
        if self.gain == 0:
            raise ConfigError(f"band {self.band_id}: gain must be nonzero")


class CalibrationResult(NamedTuple):
    values: np.ndarray   # float64 reflectance, invalid pixels zeroed
    valid: np.ndarray    # bool, False where raw == nodata
    clamped: int         # count of valid samples clipped into [0, 1]


def apply_calibration(raw: np.ndarray, meta: BandMetadata) -> CalibrationResult:
    """Scale one raw plane to reflectance: ``raw * gain + offset`` clamped to [0, 1].

    Out-of-range results are clipped and counted, not rejected: slight
    negatives after offset are routine sensor noise.
    """
    raw = np.asarray(raw)
    if raw.dtype.kind == "f":
        bad = ~np.isfinite(raw)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(f"non-finite raw sample at row {r}, col {c}")
    if meta.nodata_value is None:
        valid = np.ones(raw.shape, dtype=bool)
    elif isinstance(meta.nodata_value, float) and math.isnan(meta.nodata_value):
        valid = ~np.isnan(raw)
    else:
        valid = raw != meta.nodata_value
    out = raw.astype(np.float64) * meta.gain + meta.offset
    clamped = int(np.count_nonzero(valid & ((out < 0.0) | (out > 1.0))))
    np.clip(out, 0.0, 1.0, out=out)
    out[~valid] = 0.0
    return CalibrationResult(out, valid, clamped)


@dataclass
class MultiSpectralImage:
    """Calibrated per-band raster.  Immutable by convention after load."""

    bands: tuple[BandMetadata, ...]
    samples: np.ndarray   # (nbands, height, width) float64 in [0, 1]
    validity: np.ndarray  # (height, width) bool
    dtype_name: str = "f64"  # storage encoding used by write_image

    def __post_init__(self):
        self.bands = tuple(self.bands)
        if self.samples.ndim != 3:
            raise DataError("samples must be a (bands, height, width) array")
        if len(self.bands) != self.samples.shape[0]:
            raise DataError(
                f"{len(self.bands)} band descriptors for "
                f"{self.samples.shape[0]} planes"
            )
        if len(self.bands) < 2:
            raise DataError("an image needs at least 2 bands")
        if self.validity.shape != self.samples.shape[1:]:
            raise DimensionMismatchError(
                "validity mask shape differs from band planes"
            )
        v = self.samples[:, self.validity]
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise DataError("valid samples must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.samples.shape[2]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    def band_plane(self, band_id: int) -> np.ndarray:
        for i, b in enumerate(self.bands):
            if b.band_id == band_id:
                return self.samples[i]
        raise ConfigError(f"no band with id {band_id}")


# ---------------------------------------------------------------------------
# Header / payload I/O
# ---------------------------------------------------------------------------


def payload_path(header_path: Path | str) -> Path:
    return Path(header_path).with_suffix(".bin")


def read_header(path: Path | str) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("//", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_header(path: Path | str, entries: list[tuple[str, str]]) -> None:
    lines = [f"{k} = {v}" for k, v in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _header_int(header: dict, key: str, path) -> int:
    try:
        return int(header[key])
    except KeyError:
        raise FormatError(f"{path}: missing header key {key!r}") from None
    except ValueError:
        raise FormatError(f"{path}: header key {key!r} is not an integer") from None


def read_raster(header_path: Path | str) -> tuple[dict[str, str], np.ndarray]:
    """Read any flat raster: returns (header dict, raw (bands, h, w) array)."""
    header_path = Path(header_path)
    header = read_header(header_path)
    width = _header_int(header, "width", header_path)
    height = _header_int(header, "height", header_path)
    nbands = _header_int(header, "bands", header_path)
    if header.get("interleave", "bsq") != "bsq":
        raise FormatError(f"{header_path}: only bsq interleave is supported")
    dt = _dtype_for(header.get("dtype", "f64"))
    expected = width * height * nbands * dt.itemsize
    ppath = payload_path(header_path)
    if not ppath.exists():
        raise FormatError(f"{header_path}: payload {ppath} does not exist")
    actual = ppath.stat().st_size
    if actual < expected:
        raise TruncatedFileError(
            f"{ppath}: payload is {actual} bytes, header promises {expected}"
        )
    if actual > expected:
        raise FormatError(
            f"{ppath}: payload is {actual} bytes, header promises {expected}"
        )
    raw = np.fromfile(ppath, dtype=dt).reshape(nbands, height, width)
    return header, raw


def write_raster(
    header_path: Path | str,
    extra: list[tuple[str, str]],
    planes: np.ndarray,
    dtype_name: str,
) -> None:
    """Write (bands, h, w) raw planes plus a header carrying ``extra`` entries."""
    header_path = Path(header_path)
    dt = _dtype_for(dtype_name)
    nbands, height, width = planes.shape
    entries = [
        ("width", str(width)),
        ("height", str(height)),
        ("bands", str(nbands)),
        ("dtype", dtype_name),
        ("interleave", "bsq"),
    ] + extra
    write_header(header_path, entries)
    np.ascontiguousarray(planes, dtype=dt).tofile(payload_path(header_path))


def _band_metadata_from_header(header: dict, dtype_name: str, n: int) -> BandMetadata:
    wav = header.get(f"band.{n}.wavelength")
    if wav is None:
        raise FormatError(f"missing header key 'band.{n}.wavelength'")
    gain = float(header.get(f"band.{n}.gain", default_gain(dtype_name)))
    offset = float(header.get(f"band.{n}.offset", 0.0))
    nodata = header.get(f"band.{n}.nodata")
    return BandMetadata(
        band_id=n,
        center_wavelength=float(wav),
        gain=gain,
        offset=offset,
        nodata_value=None if nodata is None else float(nodata),
    )


def read_image(header_path: Path | str) -> MultiSpectralImage:
    """Decode a band-sequential image and calibrate every plane to [0, 1]."""
    header, raw = read_raster(header_path)
    dtype_name = header.get("dtype", "f64")
    nbands = raw.shape[0]
    bands = tuple(
        _band_metadata_from_header(header, dtype_name, n) for n in range(1, nbands + 1)
    )
    samples = np.empty(raw.shape, dtype=np.float64)
    validity = np.ones(raw.shape[1:], dtype=bool)
    for i, meta in enumerate(bands):
        values, valid, _ = apply_calibration(raw[i], meta)
        samples[i] = values
        validity &= valid
    samples[:, ~validity] = 0.0
    return MultiSpectralImage(bands, samples, validity, dtype_name)


def write_image(image: MultiSpectralImage, header_path: Path | str) -> None:
    """Encode samples back to the image's storage dtype, inverting calibration."""
    dt = _dtype_for(image.dtype_name)
    invalid = ~image.validity
    raw = np.empty(image.samples.shape, dtype=dt)
    for i, meta in enumerate(image.bands):
        enc = (image.samples[i] - meta.offset) / meta.gain
        if dt.kind in "ui":
            info = np.iinfo(dt)
            enc = np.clip(np.rint(enc), info.min, info.max)
        plane = enc.astype(dt)
        if invalid.any():
            if meta.nodata_value is None:
                raise ConfigError(
                    f"band {meta.band_id}: invalid pixels present but no "
                    "nodata value to encode them with"
                )
            plane[invalid] = dt.type(meta.nodata_value)
        raw[i] = plane
    extra: list[tuple[str, str]] = []
    for n, meta in enumerate(image.bands, start=1):
        extra.append((f"band.{n}.wavelength", repr(meta.center_wavelength)))
        extra.append((f"band.{n}.gain", repr(meta.gain)))
        extra.append((f"band.{n}.offset", repr(meta.offset)))
        if meta.nodata_value is not None:
            extra.append((f"band.{n}.nodata", repr(meta.nodata_value)))
    write_raster(header_path, extra, raw, image.dtype_name)


# ---------------------------------------------------------------------------
# Strip streaming
# ---------------------------------------------------------------------------


class BufferLedger:
    """Accounting of strip buffer bytes; lets tests pin the streaming bound."""

    def __init__(self):
        self.current = 0
        self.peak = 0

    def allocate(self, nbytes: int) -> int:
        self.current += nbytes
        self.peak = max(self.peak, self.current)
        return nbytes

    def release(self, nbytes: int) -> None:
        self.current -= nbytes

    def reset(self) -> None:
        self.current = 0
        self.peak = 0


#: Global ledger fed by file-backed streaming reads.
strip_ledger = BufferLedger()


@dataclass
class StripCursor:
    """Iteration state for strip streaming."""

    strip_height: int
    overlap: int = 0
    current_row: int = 0  # absolute row where the next strip's core begins

    def __post_init__(self):
        if self.strip_height < 1:
            raise ConfigError("strip_height must be >= 1")
        if self.overlap < 0:
            raise ConfigError("overlap must be >= 0")


@dataclass
class Strip:
    """A view of consecutive image rows.  ``core_*`` excludes overlap rows."""

    row_start: int      # absolute row of samples[:, 0, :]
    core_start: int     # absolute row of the first non-overlap row
    bands: tuple[BandMetadata, ...]
    samples: np.ndarray
    validity: np.ndarray

    @property
    def nrows(self) -> int:
        return self.samples.shape[1]

    @property
    def core_samples(self) -> np.ndarray:
        return self.samples[:, self.core_start - self.row_start :, :]

    @property
    def core_validity(self) -> np.ndarray:
        return self.validity[self.core_start - self.row_start :, :]


class ImageSource:
    """Lazily reads calibrated rows from disk without loading the full image."""

    def __init__(self, header_path: Path | str):
        self.header_path = Path(header_path)
        header = read_header(self.header_path)
        self.width = _header_int(header, "width", self.header_path)
        self.height = _header_int(header, "height", self.header_path)
        nbands = _header_int(header, "bands", self.header_path)
        if header.get("interleave", "bsq") != "bsq":
            raise FormatError(f"{self.header_path}: only bsq interleave is supported")
        self.dtype_name = header.get("dtype", "f64")
        self._dt = _dtype_for(self.dtype_name)
        self.bands = tuple(
            _band_metadata_from_header(header, self.dtype_name, n)
            for n in range(1, nbands + 1)
        )
        self._ppath = payload_path(self.header_path)
        expected = self.width * self.height * nbands * self._dt.itemsize
        actual = self._ppath.stat().st_size
        if actual < expected:
            raise TruncatedFileError(
                f"{self._ppath}: payload is {actual} bytes, header promises {expected}"
            )

    def read_rows(self, row0: int, row1: int) -> tuple[np.ndarray, np.ndarray]:
        """Read and calibrate rows [row0, row1).  Allocation is ledgered."""
        nrows = row1 - row0
        nbands = len(self.bands)
        plane_bytes = self.width * self.height * self._dt.itemsize
        row_bytes = self.width * self._dt.itemsize
        out_bytes = nbands * nrows * self.width * 8 + nrows * self.width
        strip_ledger.allocate(out_bytes)
        samples = np.empty((nbands, nrows, self.width), dtype=np.float64)
        validity = np.ones((nrows, self.width), dtype=bool)
        raw_bytes = nrows * row_bytes
        with open(self._ppath, "rb") as f:
            for i, meta in enumerate(self.bands):
                f.seek(i * plane_bytes + row0 * row_bytes)
                strip_ledger.allocate(raw_bytes)
                raw = np.fromfile(f, dtype=self._dt, count=nrows * self.width)
                raw = raw.reshape(nrows, self.width)
                values, valid, _ = apply_calibration(raw, meta)
                samples[i] = values
                validity &= valid
                del raw
                strip_ledger.release(raw_bytes)
        samples[:, ~validity] = 0.0
        return samples, validity

    def release_rows(self, row0: int, row1: int) -> None:
        nrows = row1 - row0
        strip_ledger.release(
            len(self.bands) * nrows * self.width * 8 + nrows * self.width
        )


def stream_strips(
    source: MultiSpectralImage | ImageSource,
    strip_height: int,
    overlap: int = 0,
) -> Iterator[Strip]:
    """Yield strips covering the image top to bottom.

    The concatenation of core rows reproduces the full image exactly.  For a
    file-backed source, held memory stays O(strip_height x width x bands)
    regardless of image height; in-memory sources yield zero-copy views.
    """
    cursor = StripCursor(strip_height, overlap)
    height = source.height
    file_backed = isinstance(source, ImageSource)
    while cursor.current_row < height:
        core_start = cursor.current_row
        core_end = min(core_start + cursor.strip_height, height)
        row0 = max(0, core_start - cursor.overlap) if core_start > 0 else 0
        if file_backed:
            samples, validity = source.read_rows(row0, core_end)
        else:
            samples = source.samples[:, row0:core_end, :]
            validity = source.validity[row0:core_end, :]
        yield Strip(row0, core_start, tuple(source.bands), samples, validity)
        if file_backed:
            source.release_rows(row0, core_end)
        cursor.current_row = core_end


def open_image(header_path: Path | str) -> ImageSource:
    return ImageSource(header_path)

"""Deterministic two-pass connected components and superpixel description.

Pass 1 scans row-major, assigning provisional ids per run of equal labels
and recording equivalences in a union-find forest; pass 2 resolves roots
and relabels to dense final ids in row-major first-encounter order, which
makes output maps reproducible byte for byte.  The labeler accepts rows
incrementally, so strip-streamed labeling needs no overlap rows and merges
across seams by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import raster
from .classify import NODATA, CategoricalMap
from .errors import ConfigError, DataError, DimensionMismatchError, FormatError
from .raster import MultiSpectralImage

_OFFSETS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_OFFSETS_8 = _OFFSETS_4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def _offsets(adjacency: int):
    if adjacency == 4:
        return _OFFSETS_4
    if adjacency == 8:
        return _OFFSETS_8
    raise ConfigError(f"adjacency must be 4 or 8, got {adjacency}")


@dataclass
class OpStats:
    """Work accounting for the linear-time contracts."""

    pixel_visits: int = 0
    union_find_ops: int = 0


@dataclass
class SegmentationMap:
    segment_ids: np.ndarray  # (height, width) int32, 0 = nodata
    segment_count: int

    def __post_init__(self):
        self.segment_ids = np.asarray(self.segment_ids, dtype=np.int32)
        counts = np.bincount(
            self.segment_ids.ravel(), minlength=self.segment_count + 1
        )
        if self.segment_ids.max(initial=0) != self.segment_count:
            raise DataError("segment ids are not dense")
        if self.segment_count and (counts[1:] == 0).any():
            raise DataError("segment ids are not dense")

    @property
    def width(self) -> int:
        return self.segment_ids.shape[1]

    @property
    def height(self) -> int:
        return self.segment_ids.shape[0]


@dataclass
class CrossAuraMap:
    counts: np.ndarray  # (height, width) uint8 in {0..adjacency}
    adjacency: int


@dataclass
class SuperpixelRecord:
    segment_id: int
    label: int  # with segment_id this forms the (segment, stratum) 2-tuple
    pixel_count: int
    min_row: int
    min_col: int
    max_row: int
    max_col: int
    perimeter: int
    compactness: float
    band_sums: tuple[float, ...]


@dataclass
class RmseStats:
    minimum: float
    maximum: float
    mean: float
    stdev: float


@dataclass
class RmseMap:
    values: np.ndarray  # (height, width) float64, invalid pixels zeroed
    validity: np.ndarray

    def stats(self) -> RmseStats:
        v = self.values[self.validity]
        if v.size == 0:
            return RmseStats(0.0, 0.0, 0.0, 0.0)
        return RmseStats(
            float(v.min()), float(v.max()), float(v.mean()), float(v.std())
        )


# ---------------------------------------------------------------------------
# Union-find
# ---------------------------------------------------------------------------


class _UnionFind:
    def __init__(self, stats: OpStats | None = None):
        self.parent: list[int] = []
        self.size: list[int] = []
        self.stats = stats

    def make(self) -> int:
        idx = len(self.parent)
        self.parent.append(idx)
        self.size.append(1)
        return idx

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:  # path compression
            parent[x], x = root, parent[x]
        if self.stats is not None:
            self.stats.union_find_ops += 1
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        if self.stats is not None:
            self.stats.union_find_ops += 1


# ---------------------------------------------------------------------------
# Two-pass connected-component labeling
# ---------------------------------------------------------------------------


class TwoPassLabeler:
    """Feed label rows top to bottom, then finalize to a SegmentationMap."""

    def __init__(self, width: int, adjacency: int = 8, stats: OpStats | None = None):
        _offsets(adjacency)
        self.width = width
        self.adjacency = adjacency
        self.stats = stats
        self._uf = _UnionFind(stats)
        self._prov_rows: list[np.ndarray] = []
        self._prev_vals: np.ndarray | None = None
        self._prev_prov: np.ndarray | None = None
        self._prev_start: np.ndarray | None = None

    def feed(self, rows: np.ndarray) -> None:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.int32))
        if rows.shape[1] != self.width:
            raise DimensionMismatchError(
                f"row width {rows.shape[1]} != labeler width {self.width}"
            )
        for r in range(rows.shape[0]):
            self._feed_row(rows[r])

    def _feed_row(self, vals: np.ndarray) -> None:
        valid = vals != NODATA
        start = valid.copy()
        if len(vals) > 1:
            start[1:] &= (vals[1:] != vals[:-1]) | ~valid[:-1]
        n_runs = int(start.sum())
        prov = np.full(len(vals), -1, dtype=np.int64)
        if n_runs:
            run_ids = np.fromiter(
                (self._uf.make() for _ in range(n_runs)), dtype=np.int64, count=n_runs
            )
            run_idx = np.cumsum(start) - 1
            prov[valid] = run_ids[run_idx[valid]]
        pv, pp, ps = self._prev_vals, self._prev_prov, self._prev_start
        if pv is not None and n_runs:
            prev_valid = pp >= 0
            # North: a (run, run-above) pair always exposes one of its two
            # run starts inside the overlap window, so this mask unions each
            # pair exactly where needed.
            mask = valid & prev_valid & (vals == pv) & (start | ps)
            for c in np.nonzero(mask)[0]:
                self._uf.union(int(prov[c]), int(pp[c]))
            if self.adjacency == 8:
                m = (
                    valid[1:]
                    & prev_valid[:-1]
                    & (vals[1:] == pv[:-1])
                    & (start[1:] | ps[:-1])
                )
                for c in np.nonzero(m)[0]:
                    self._uf.union(int(prov[c + 1]), int(pp[c]))
                m = (
                    valid[:-1]
                    & prev_valid[1:]
                    & (vals[:-1] == pv[1:])
                    & (start[:-1] | ps[1:])
                )
                for c in np.nonzero(m)[0]:
                    self._uf.union(int(prov[c]), int(pp[c + 1]))
        self._prov_rows.append(prov)
        self._prev_vals, self._prev_prov, self._prev_start = vals, prov, start
        if self.stats is not None:
            self.stats.pixel_visits += len(vals)

    def finalize(self) -> SegmentationMap:
        if not self._prov_rows:
            raise DataError("no rows fed to the labeler")
        prov = np.stack(self._prov_rows)
        n = len(self._uf.parent)
        if n == 0:
            return SegmentationMap(np.zeros(prov.shape, dtype=np.int32), 0)
        root = np.fromiter((self._uf.find(i) for i in range(n)), dtype=np.int64, count=n)
        valid = prov >= 0
        roots_px = np.where(valid, root[np.maximum(prov, 0)], -1)
        flat = roots_px[valid]  # boolean indexing preserves row-major order
        uniq, first_pos = np.unique(flat, return_index=True)
        order = np.argsort(first_pos, kind="stable")
        final_of_root = np.zeros(n, dtype=np.int32)
        final_of_root[uniq[order]] = np.arange(1, len(uniq) + 1, dtype=np.int32)
        seg = np.where(valid, final_of_root[np.maximum(roots_px, 0)], 0)
        if self.stats is not None:
            self.stats.pixel_visits += int(prov.size)  # second pass
        return SegmentationMap(seg.astype(np.int32), int(len(uniq)))


def connected_components(
    cmap: CategoricalMap, adjacency: int = 8, stats: OpStats | None = None
) -> SegmentationMap:
    """Label maximal connected same-label regions; nodata forms no segment."""
    if cmap.labels.size == 0:
        raise DataError("cannot segment an empty map")
    labeler = TwoPassLabeler(cmap.width, adjacency, stats)
    labeler.feed(cmap.labels)
    return labeler.finalize()


# ---------------------------------------------------------------------------
# Cross-aura contours
# ---------------------------------------------------------------------------


def cross_aura(
    cmap: CategoricalMap, adjacency: int = 8, stats: OpStats | None = None
) -> CrossAuraMap:
    """Count, per pixel, in-image neighbors whose label differs.

    Nodata participates as its own label value, which keeps contributions
    symmetric; out-of-image neighbors contribute nothing.
    """
    labels = cmap.labels
    if labels.size == 0:
        raise DataError("cannot contour an empty map")
    h, w = labels.shape
    counts = np.zeros((h, w), dtype=np.uint8)
    offsets = _offsets(adjacency)
    for dr, dc in offsets:
        r0, r1 = max(0, -dr), min(h, h - dr)
        c0, c1 = max(0, -dc), min(w, w - dc)
        if r0 >= r1 or c0 >= c1:
            continue
        counts[r0:r1, c0:c1] += (
            labels[r0:r1, c0:c1] != labels[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        )
    if stats is not None:
        stats.pixel_visits += int(labels.size) * len(offsets)
    return CrossAuraMap(counts, adjacency)


# ---------------------------------------------------------------------------
# Superpixel description table
# ---------------------------------------------------------------------------


def build_superpixel_table(
    cmap: CategoricalMap,
    seg: SegmentationMap,
    image: MultiSpectralImage,
    aura: CrossAuraMap,
) -> list[SuperpixelRecord]:
    """One record per segment: area, bbox, per-band sums, perimeter, compactness."""
    shape = cmap.labels.shape
    if seg.segment_ids.shape != shape or aura.counts.shape != shape:
        raise DimensionMismatchError("map, segmentation and aura shapes differ")
    if image.samples.shape[1:] != shape:
        raise DimensionMismatchError("image shape differs from map shape")
    ids = seg.segment_ids
    valid = ids > 0
    n = seg.segment_count
    flat = ids[valid]
    counts = np.bincount(flat, minlength=n + 1)
    label_of = np.zeros(n + 1, dtype=np.int64)
    label_of[flat] = cmap.labels[valid]
    if (cmap.labels[valid] != label_of[flat]).any():
        raise DataError("segmentation is not label-homogeneous over the map")
    perim = np.bincount(flat, weights=aura.counts[valid].astype(np.float64),
                        minlength=n + 1)
    sums = np.empty((len(image.bands), n + 1), dtype=np.float64)
    for b in range(len(image.bands)):
        sums[b] = np.bincount(
            flat, weights=image.samples[b][valid], minlength=n + 1
        )
    rr, cc = np.nonzero(valid)
    min_row = np.full(n + 1, np.iinfo(np.int64).max, dtype=np.int64)
    min_col = np.full(n + 1, np.iinfo(np.int64).max, dtype=np.int64)
    max_row = np.full(n + 1, -1, dtype=np.int64)
    max_col = np.full(n + 1, -1, dtype=np.int64)
    np.minimum.at(min_row, flat, rr)
    np.minimum.at(min_col, flat, cc)
    np.maximum.at(max_row, flat, rr)
    np.maximum.at(max_col, flat, cc)
    records = []
    for sid in range(1, n + 1):
        p = float(perim[sid])
        area = int(counts[sid])
        if p > 0:
            compactness = min(1.0, 4.0 * math.pi * area / (p * p))
        else:
            compactness = 1.0  # only an image-filling segment has no contour
        records.append(
            SuperpixelRecord(
                segment_id=sid,
                label=int(label_of[sid]),
                pixel_count=area,
                min_row=int(min_row[sid]),
                min_col=int(min_col[sid]),
                max_row=int(max_row[sid]),
                max_col=int(max_col[sid]),
                perimeter=int(p),
                compactness=compactness,
                band_sums=tuple(float(sums[b, sid]) for b in range(sums.shape[0])),
            )
        )
    return records


def write_superpixel_csv(records: Sequence[SuperpixelRecord], path: Path | str) -> None:
    n_bands = len(records[0].band_sums) if records else 0
    header = [
        "segment_id", "label", "pixel_count", "min_row", "min_col",
        "max_row", "max_col", "perimeter", "compactness",
    ] + [f"sum_b{b + 1}" for b in range(n_bands)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for r in records:
            writer.writerow(
                [
                    r.segment_id, r.label, r.pixel_count, r.min_row, r.min_col,
                    r.max_row, r.max_col, r.perimeter, repr(r.compactness),
                ]
                + [repr(s) for s in r.band_sums]
            )


# ---------------------------------------------------------------------------
# Piecewise-constant reconstruction and RMSE
# ---------------------------------------------------------------------------


def reconstruct(
    seg: SegmentationMap,
    table: Sequence[SuperpixelRecord],
    image: MultiSpectralImage,
) -> MultiSpectralImage:
    """Replace every pixel by its segment's per-band mean ("mean view")."""
    if len(table) != seg.segment_count:
        raise DataError(
            f"table has {len(table)} records for {seg.segment_count} segments"
        )
    if image.samples.shape[1:] != seg.segment_ids.shape:
        raise DimensionMismatchError("image shape differs from segmentation shape")
    n = seg.segment_count
    nbands = len(image.bands)
    means = np.zeros((n + 1, nbands), dtype=np.float64)
    for rec in table:
        if not 1 <= rec.segment_id <= n:
            raise DataError(f"record segment_id {rec.segment_id} out of range")
        means[rec.segment_id] = np.asarray(rec.band_sums) / rec.pixel_count
    out = np.moveaxis(means[seg.segment_ids], -1, 0)
    validity = seg.segment_ids > 0
    out[:, ~validity] = 0.0
    return MultiSpectralImage(image.bands, out, validity, image.dtype_name)


def pixel_rmse(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel root of the band-mean squared difference of two stacks."""
    a = np.atleast_3d(np.asarray(a, dtype=np.float64))
    b = np.atleast_3d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionMismatchError(f"stack shapes differ: {a.shape} vs {b.shape}")
    return np.sqrt(np.mean((a - b) ** 2, axis=0))


def rmse_map(original: MultiSpectralImage, reconstruction: MultiSpectralImage) -> RmseMap:
    """Per-pixel RMSE between an image and its piecewise-constant approximation."""
    if original.samples.shape != reconstruction.samples.shape:
        raise DimensionMismatchError("original and reconstruction shapes differ")
    values = pixel_rmse(original.samples, reconstruction.samples)
    validity = original.validity & reconstruction.validity
    values[~validity] = 0.0
    return RmseMap(values, validity)


# ---------------------------------------------------------------------------
# Segmentation / plane file I/O
# ---------------------------------------------------------------------------


def write_segmentation(seg: SegmentationMap, header_path: Path | str) -> None:
    extra = [("maptype", "segmentation"), ("segments", str(seg.segment_count))]
    planes = seg.segment_ids[np.newaxis, :, :].astype("<u4")
    raster.write_raster(header_path, extra, planes, "u32")


def read_segmentation(header_path: Path | str) -> SegmentationMap:
    header, raw = raster.read_raster(header_path)
    if header.get("maptype") != "segmentation":
        raise FormatError(f"{header_path}: not a segmentation map")
    return SegmentationMap(raw[0].astype(np.int32), int(header["segments"]))


def write_aura(aura: CrossAuraMap, header_path: Path | str) -> None:
    extra = [("maptype", "cross-aura"), ("adjacency", str(aura.adjacency))]
    raster.write_raster(header_path, extra, aura.counts[np.newaxis, :, :], "u8")


def write_rmse(rmse: RmseMap, header_path: Path | str) -> None:
    extra = [("maptype", "rmse")]
    raster.write_raster(header_path, extra, rmse.values[np.newaxis, :, :], "f64")

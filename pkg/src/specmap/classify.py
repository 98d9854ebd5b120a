"""Ordered-rule color naming: categorical maps, classification, aggregation.

Label 0 is reserved for nodata.  Every other label is a legend entry, and
for maps produced by ``classify`` the labels are the rule indices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import raster
from .errors import ConfigError, DataError, FormatError, MappingError
from .raster import ImageSource, MultiSpectralImage, Strip, stream_strips
from .rules import RuleSet, eval_expr

NODATA = 0

#: Maximal wavelength distance (micrometers) for binding a rule-file band
#: symbol to an image band.  Neighboring optical band centers sit much
#: further apart than this.
WAVELENGTH_TOLERANCE = 0.03


@dataclass(frozen=True)
class LegendEntry:
    label: int
    name: str
    color: tuple[int, int, int]


@dataclass
class CategoricalMap:
    """Per-pixel label raster plus its legend."""

    labels: np.ndarray  # (height, width) int32, 0 = nodata
    legend: tuple[LegendEntry, ...]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise DataError("labels must be a 2-D array")
        self.legend = tuple(self.legend)
        known = {e.label for e in self.legend}
        if NODATA in known:
            raise ConfigError("label 0 is reserved for nodata")
        present = set(np.unique(self.labels).tolist()) - {NODATA}
        unknown = present - known
        if unknown:
            raise DataError(f"labels missing from legend: {sorted(unknown)}")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def cardinality(self) -> int:
        return len(self.legend)

    @property
    def validity(self) -> np.ndarray:
        return self.labels != NODATA

    def names(self) -> dict[int, str]:
        return {e.label: e.name for e in self.legend}


@dataclass
class LegendAggregation:
    """Total child-label to parent-label function between two legends."""

    mapping: dict[int, int]
    parent_legend: tuple[LegendEntry, ...]

    def __post_init__(self):
        parents = {e.label for e in self.parent_legend}
        missing = set(self.mapping.values()) - parents
        if missing:
            raise ConfigError(
                f"mapping targets missing from parent legend: {sorted(missing)}"
            )


@dataclass
class PixelVisitCounter:
    """Counts per-pixel label decisions; one-pass classification makes
    exactly width x height of them."""

    visits: int = 0


# ---------------------------------------------------------------------------
# Band binding
# ---------------------------------------------------------------------------


def bind_bands(
    ruleset: RuleSet,
    bands: Iterable[raster.BandMetadata],
    tolerance: float = WAVELENGTH_TOLERANCE,
) -> dict[str, int]:
    """Match declared rule symbols to image band positions by wavelength.

    Returns symbol -> band index (into the image band list).  Symbols with
    no band inside the tolerance are left out; the caller decides whether
    they were required.
    """
    bands = list(bands)
    bound: dict[str, int] = {}
    taken: dict[int, str] = {}
    for symbol, wavelength in ruleset.declared_bands:
        dists = [abs(b.center_wavelength - wavelength) for b in bands]
        if not dists:
            continue
        idx = int(np.argmin(dists))
        if dists[idx] > tolerance:
            continue
        if idx in taken:
            raise ConfigError(
                f"band symbols {taken[idx]} and {symbol} both bind to the "
                f"image band at {bands[idx].center_wavelength} um"
            )
        taken[idx] = symbol
        bound[symbol] = idx
    return bound


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def _classify_planes(
    planes: dict[str, np.ndarray],
    validity: np.ndarray,
    ruleset: RuleSet,
    policy: str,
    counter: PixelVisitCounter | None,
) -> np.ndarray:
    labels = np.full(validity.shape, ruleset.fallback_index, dtype=np.int32)
    if policy == "last-match":
        for rule in ruleset.rules:  # ascending index: later matches override
            mask = eval_expr(rule.expr, planes)
            if mask is None:
                continue
            labels[np.logical_and(mask, validity)] = rule.index
    else:
        unassigned = np.ones(validity.shape, dtype=bool)
        for rule in ruleset.rules:
            mask = eval_expr(rule.expr, planes)
            if mask is None:
                continue
            hit = np.logical_and(np.logical_and(mask, validity), unassigned)
            labels[hit] = rule.index
            unassigned &= ~hit
    labels[~validity] = NODATA
    if counter is not None:
        counter.visits += int(validity.size)
    return labels


def _planes_for(
    ruleset: RuleSet,
    bands: Iterable[raster.BandMetadata],
    samples: np.ndarray,
) -> dict[str, np.ndarray]:
    binding = bind_bands(ruleset, bands)
    missing = ruleset.required_bands() - set(binding)
    if missing:
        raise ConfigError(
            "image does not supply required band(s): " + ", ".join(sorted(missing))
        )
    return {symbol: samples[idx] for symbol, idx in binding.items()}


def classify(
    image: MultiSpectralImage,
    ruleset: RuleSet,
    policy: str | None = None,
    counter: PixelVisitCounter | None = None,
) -> CategoricalMap:
    """Label every valid pixel with the winning rule index.

    Rules are evaluated in index order; under last-match the highest
    satisfied index wins, under first-match the lowest.  Pixels satisfying
    no rule get the fallback class; invalid pixels get nodata.
    """
    policy = policy or ruleset.match_policy
    if policy not in ("last-match", "first-match"):
        raise ConfigError(f"unknown match policy {policy!r}")
    planes = _planes_for(ruleset, image.bands, image.samples)
    labels = _classify_planes(planes, image.validity, ruleset, policy, counter)
    return CategoricalMap(labels, legend_from_ruleset(ruleset))


def classify_strip(
    strip: Strip,
    ruleset: RuleSet,
    policy: str,
    counter: PixelVisitCounter | None = None,
) -> np.ndarray:
    """Label the core rows of one strip; classification is context-free."""
    planes = _planes_for(ruleset, strip.bands, strip.core_samples)
    return _classify_planes(planes, strip.core_validity, ruleset, policy, counter)


def classify_streamed(
    source: MultiSpectralImage | ImageSource,
    ruleset: RuleSet,
    strip_height: int,
    policy: str | None = None,
    counter: PixelVisitCounter | None = None,
    workers: int = 1,
) -> CategoricalMap:
    """Strip-streamed classify; pixel-identical to whole-image classify.

    With workers > 1 strips go to a thread pool, but at most ``workers``
    strips are in flight at once so file-backed sources keep their fixed
    memory footprint.  Visit accounting stays in the calling thread.
    """
    policy = policy or ruleset.match_policy
    labels = np.empty((source.height, source.width), dtype=np.int32)

    def finish(start: int, rows: np.ndarray) -> None:
        labels[start : start + rows.shape[0]] = rows
        if counter is not None:
            counter.visits += int(rows.size)

    strips = stream_strips(source, strip_height, overlap=0)
    if workers <= 1:
        for strip in strips:
            finish(strip.core_start, classify_strip(strip, ruleset, policy))
    else:
        from collections import deque
        from concurrent.futures import ThreadPoolExecutor

        def work(strip: Strip):
            return strip.core_start, classify_strip(strip, ruleset, policy)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            pending = deque()
            for strip in strips:
                pending.append(pool.submit(work, strip))
                if len(pending) > workers:
                    finish(*pending.popleft().result())
            while pending:
                finish(*pending.popleft().result())
    return CategoricalMap(labels, legend_from_ruleset(ruleset))


def legend_from_ruleset(ruleset: RuleSet) -> tuple[LegendEntry, ...]:
    return tuple(
        LegendEntry(label, name, color)
        for label, name, color in ruleset.legend_entries()
    )


# ---------------------------------------------------------------------------
# Legend aggregation
# ---------------------------------------------------------------------------


def relabel(labels: np.ndarray, mapping: dict[int, int]) -> np.ndarray:
    """Apply a label-to-label function, preserving nodata."""
    present = set(np.unique(labels).tolist()) - {NODATA}
    unmapped = present - set(mapping)
    if unmapped:
        raise MappingError(f"labels outside the mapping domain: {sorted(unmapped)}")
    lut = np.zeros(max([NODATA, *mapping.keys()]) + 1, dtype=np.int32)
    for child, parent in mapping.items():
        lut[child] = parent
    return lut[labels]


def aggregate(cmap: CategoricalMap, agg: LegendAggregation) -> CategoricalMap:
    """Merge child classes into parent classes through a total mapping."""
    map_labels = {e.label for e in cmap.legend}
    missing = map_labels - set(agg.mapping)
    if missing:
        raise MappingError(
            f"aggregation is not total: no parent for labels {sorted(missing)}"
        )
    return CategoricalMap(relabel(cmap.labels, agg.mapping), agg.parent_legend)


def compose_aggregations(
    first: LegendAggregation, second: LegendAggregation
) -> LegendAggregation:
    """child -> parent1 -> parent2 collapsed into one mapping."""
    mapping = {c: second.mapping[p] for c, p in first.mapping.items()}
    return LegendAggregation(mapping, second.parent_legend)


def auto_color(i: int) -> tuple[int, int, int]:
    """Deterministic, well-spread colors for synthesized legend entries."""
    import colorsys

    hue = (i * 0.6180339887498949) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.55, 0.92)
    return (int(r * 255), int(g * 255), int(b * 255))


def read_aggregation(
    path: Path | str, parent_legend: tuple[LegendEntry, ...] | None = None
) -> LegendAggregation:
    """Read a ``child_label,parent_label`` CSV.

    Without an explicit parent legend, entries are synthesized as
    ``class-<label>`` with generated colors.
    """
    mapping: dict[int, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {
            "child_label",
            "parent_label",
        } <= set(reader.fieldnames):
            raise FormatError(f"{path}: expected columns child_label,parent_label")
        for row in reader:
            child = int(row["child_label"])
            if child in mapping:
                raise FormatError(f"{path}: duplicate child_label {child}")
            mapping[child] = int(row["parent_label"])
    if parent_legend is None:
        parents = sorted(set(mapping.values()))
        parent_legend = tuple(
            LegendEntry(p, f"class-{p}", auto_color(i)) for i, p in enumerate(parents)
        )
    return LegendAggregation(mapping, parent_legend)


# ---------------------------------------------------------------------------
# Categorical map file I/O (u16 payload + legend in header)
# ---------------------------------------------------------------------------


def write_map(cmap: CategoricalMap, header_path: Path | str) -> None:
    extra = [("maptype", "categorical")]
    for e in cmap.legend:
        extra.append((f"legend.{e.label}.name", e.name))
        extra.append((f"legend.{e.label}.color", "#%02X%02X%02X" % e.color))
    planes = cmap.labels[np.newaxis, :, :].astype("<u2")
    raster.write_raster(header_path, extra, planes, "u16")


def read_map(header_path: Path | str) -> CategoricalMap:
    header, raw = raster.read_raster(header_path)
    if header.get("maptype") != "categorical":
        raise FormatError(f"{header_path}: not a categorical map")
    legend = []
    for key, value in header.items():
        if key.startswith("legend.") and key.endswith(".name"):
            label = int(key.split(".")[1])
            color_text = header.get(f"legend.{label}.color", "#000000")
            v = int(color_text.lstrip("#"), 16)
            color = ((v >> 16) & 0xFF, (v >> 8) & 0xFF, v & 0xFF)
            legend.append(LegendEntry(label, value, color))
    legend.sort(key=lambda e: e.label)
    return CategoricalMap(raw[0].astype(np.int32), tuple(legend))

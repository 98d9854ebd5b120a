"""Spectral-rule color naming, superpixel segmentation and map comparison."""

from .classify import (
    CategoricalMap,
    LegendAggregation,
    LegendEntry,
    PixelVisitCounter,
    aggregate,
    classify,
    classify_streamed,
    read_aggregation,
    read_map,
    write_map,
)
from .compare import (
    ContingencyTable,
    HarmonizationTrace,
    LegendRelation,
    Override,
    apply_overrides,
    build_contingency,
    build_translation,
    cvpai2,
    harmonize,
    read_legend_mapping,
    translate_legend,
)
from .errors import SpecmapError
from .evidence import ClassScores, EvidenceVector, combine
from .raster import (
    BandMetadata,
    MultiSpectralImage,
    Strip,
    StripCursor,
    apply_calibration,
    open_image,
    read_image,
    stream_strips,
    write_image,
)
from .rules import RuleSet, eval_rule, format_rules, load_specl, parse_rules
from .segmentation import (
    CrossAuraMap,
    RmseMap,
    SegmentationMap,
    SuperpixelRecord,
    build_superpixel_table,
    connected_components,
    cross_aura,
    reconstruct,
    rmse_map,
)

__version__ = "0.1.0"

__all__ = [
    "BandMetadata",
    "CategoricalMap",
    "ClassScores",
    "ContingencyTable",
    "CrossAuraMap",
    "EvidenceVector",
    "HarmonizationTrace",
    "LegendAggregation",
    "LegendEntry",
    "LegendRelation",
    "MultiSpectralImage",
    "Override",
    "PixelVisitCounter",
    "RmseMap",
    "RuleSet",
    "SegmentationMap",
    "SpecmapError",
    "Strip",
    "StripCursor",
    "SuperpixelRecord",
    "aggregate",
    "apply_calibration",
    "apply_overrides",
    "build_contingency",
    "build_superpixel_table",
    "build_translation",
    "classify",
    "classify_streamed",
    "combine",
    "connected_components",
    "cross_aura",
    "cvpai2",
    "eval_rule",
    "format_rules",
    "harmonize",
    "load_specl",
    "open_image",
    "parse_rules",
    "read_aggregation",
    "read_image",
    "read_legend_mapping",
    "read_map",
    "reconstruct",
    "rmse_map",
    "stream_strips",
    "translate_legend",
    "write_image",
    "write_map",
]

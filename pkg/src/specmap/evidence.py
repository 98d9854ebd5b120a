"""Convergence-of-evidence combiner.

Combines a pixel/object's color name with caller-supplied shape, texture
and spatial-relationship memberships through the fuzzy-AND (min) operator,
stratified by a binary legend relation: classes the relation bars score
exactly zero no matter what the other memberships say.  Scores are
memberships, not probabilities; no normalization is applied.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compare import LegendRelation
from .errors import ConfigError, DataError, FormatError


@dataclass
class EvidenceVector:
    color_name: str
    shape: np.ndarray    # per-class membership in [0, 1]
    texture: np.ndarray
    spatial: np.ndarray

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=np.float64)
        self.texture = np.asarray(self.texture, dtype=np.float64)
        self.spatial = np.asarray(self.spatial, dtype=np.float64)
        for name, arr in (("shape", self.shape), ("texture", self.texture),
                          ("spatial", self.spatial)):
            if arr.ndim != 1:
                raise DataError(f"{name} memberships must be a 1-D vector")
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise DataError(f"{name} memberships must lie in [0, 1]")


@dataclass
class ClassScores:
    class_names: tuple[str, ...]
    values: np.ndarray  # per-class score in [0, 1]


def combine(ev: EvidenceVector, rel: LegendRelation) -> ClassScores:
    """score(c) = min(relation[color, c], shape(c), texture(c), spatial(c))."""
    try:
        row = rel.test_names.index(ev.color_name)
    except ValueError:
        raise ConfigError(f"unknown color name {ev.color_name!r}") from None
    rc = len(rel.ref_names)
    for name, arr in (("shape", ev.shape), ("texture", ev.texture),
                      ("spatial", ev.spatial)):
        if arr.shape != (rc,):
            raise DataError(
                f"{name} memberships have {arr.size} entries for {rc} classes"
            )
    gate = rel.matrix[row].astype(np.float64)
    values = np.minimum.reduce([gate, ev.shape, ev.texture, ev.spatial])
    return ClassScores(rel.ref_names, values)


# ---------------------------------------------------------------------------
# CSV interface (long format: one row per vector id and class)
# ---------------------------------------------------------------------------


def read_evidence_csv(
    path: Path | str, rel: LegendRelation
) -> list[tuple[str, EvidenceVector]]:
    """Read ``id,color_name,class_name,shape,texture,spatial`` rows.

    Every vector id must supply one row per reference class of the relation.
    """
    groups: dict[str, dict[str, tuple[float, float, float]]] = {}
    colors: dict[str, str] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        needed = {"id", "color_name", "class_name", "shape", "texture", "spatial"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise FormatError(
                f"{path}: expected columns id,color_name,class_name,"
                "shape,texture,spatial"
            )
        for row in reader:
            vid = row["id"]
            if vid not in groups:
                groups[vid] = {}
                colors[vid] = row["color_name"]
                order.append(vid)
            elif colors[vid] != row["color_name"]:
                raise DataError(f"{path}: vector {vid!r} has two color names")
            groups[vid][row["class_name"]] = (
                float(row["shape"]), float(row["texture"]), float(row["spatial"])
            )
    out = []
    for vid in order:
        rows = groups[vid]
        missing = set(rel.ref_names) - set(rows)
        if missing:
            raise DataError(
                f"{path}: vector {vid!r} lacks classes {sorted(missing)}"
            )
        shape = np.array([rows[c][0] for c in rel.ref_names])
        texture = np.array([rows[c][1] for c in rel.ref_names])
        spatial = np.array([rows[c][2] for c in rel.ref_names])
        out.append((vid, EvidenceVector(colors[vid], shape, texture, spatial)))
    return out


def write_scores_csv(
    path: Path | str, scored: list[tuple[str, ClassScores]]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "class_name", "score"])
        for vid, scores in scored:
            for name, value in zip(scores.class_names, scores.values):
                writer.writerow([vid, name, repr(float(value))])

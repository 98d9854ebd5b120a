"""Command-line pipeline: classify, segment, compare, evidence.

Every run writes a ``*.manifest.json`` recording the exact configuration
plus content hashes of all inputs and outputs, enough to reproduce the run
bit for bit.  Missing input paths exit with status 2 before any processing
starts; processing failures exit with status 1.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import __version__, raster
from .classify import (
    PixelVisitCounter,
    aggregate,
    classify,
    classify_streamed,
    read_aggregation,
    read_map,
    write_map,
)
from .compare import (
    apply_overrides,
    build_contingency,
    build_translation,
    cvpai2,
    harmonize,
    read_contingency_csv,
    read_legend_mapping,
    read_overrides_csv,
    read_relation_csv,
    read_resolution,
    translate_legend,
    write_contingency_csv,
    write_matrix_csv,
    write_relation_csv,
)
from .errors import SpecmapError
from .evidence import combine, read_evidence_csv, write_scores_csv
from .rules import parse_rules
from .segmentation import (
    TwoPassLabeler,
    build_superpixel_table,
    connected_components,
    cross_aura,
    reconstruct,
    rmse_map,
    write_aura,
    write_rmse,
    write_segmentation,
    write_superpixel_csv,
)

WORKERS_ENV = "SPECMAP_WORKERS"


@dataclass
class RunConfig:
    """Validated invocation parameters; paths checked before any processing."""

    command: str
    params: dict

    def as_json(self) -> dict:
        return {"command": self.command, **self.params}


def _default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _fail_missing(path: Path, what: str) -> None:
    if not path.exists():
        click.echo(f"error: {what} not found: {path}", err=True)
        sys.exit(2)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _with_payload(paths: list[Path]) -> list[Path]:
    out = []
    for p in paths:
        out.append(p)
        if p.suffix == ".hdr":
            out.append(raster.payload_path(p))
    return out


def _write_manifest(
    manifest_path: Path, config: RunConfig, inputs: list[Path], outputs: list[Path]
) -> None:
    manifest = {
        "tool": f"specmap {__version__}",
        "config": config.as_json(),
        "inputs": [
            {"path": str(p), "sha256": _sha256(p)} for p in _with_payload(inputs)
        ],
        "outputs": [
            {"path": str(p), "sha256": _sha256(p)} for p in _with_payload(outputs)
        ],
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _emit(report: dict, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(report, indent=2))
    else:
        for key, value in report.items():
            click.echo(f"{key}: {value}")


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Spectral-rule color naming, segmentation and map comparison."""


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------


@main.command("classify")
@click.option("--rules", "rules_path", required=True, type=click.Path(path_type=Path))
@click.option("--in", "input_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", "output_path", required=True, type=click.Path(path_type=Path))
@click.option("--policy", type=click.Choice(["last-match", "first-match"]), default=None,
              help="Override the rule file's match policy.")
@click.option("--stream", "strip_height", type=int, default=None,
              help="Process in strips of this many rows.")
@click.option("--aggregate", "aggregate_path", type=click.Path(path_type=Path),
              default=None, help="child_label,parent_label CSV applied after classify.")
@click.option("--workers", type=int, default=None,
              help=f"Strip workers (default: {WORKERS_ENV} or CPU count).")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable report.")
def cmd_classify(rules_path, input_path, output_path, policy, strip_height,
                 aggregate_path, workers, as_json) -> None:
    """Apply an ordered rule set to a calibrated image."""
    _fail_missing(rules_path, "rule file")
    _fail_missing(input_path, "input image header")
    _fail_missing(raster.payload_path(input_path), "input image payload")
    if aggregate_path is not None:
        _fail_missing(aggregate_path, "aggregation file")
    config = RunConfig("classify", {
        "rules": str(rules_path), "in": str(input_path), "out": str(output_path),
        "policy": policy, "stream": strip_height, "aggregate":
        None if aggregate_path is None else str(aggregate_path),
    })
    try:
        ruleset = parse_rules(rules_path.read_text(encoding="utf-8"))
        counter = PixelVisitCounter()
        if strip_height:
            source = raster.open_image(input_path)
            nworkers = workers if workers is not None else _default_workers()
            cmap = classify_streamed(source, ruleset, strip_height,
                                     policy=policy, counter=counter,
                                     workers=nworkers)
        else:
            image = raster.read_image(input_path)
            cmap = classify(image, ruleset, policy=policy, counter=counter)
        expected = cmap.labels.size
        if counter.visits != expected:
            raise SpecmapError(
                f"one-pass contract violated: {counter.visits} visits "
                f"for {expected} pixels"
            )
        if aggregate_path is not None:
            cmap = aggregate(cmap, read_aggregation(aggregate_path))
        write_map(cmap, output_path)
    except SpecmapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    inputs = [rules_path, input_path] + (
        [aggregate_path] if aggregate_path is not None else []
    )
    _write_manifest(output_path.with_suffix(".manifest.json"), config,
                    inputs, [output_path])
    values, counts = np.unique(cmap.labels, return_counts=True)
    _emit({
        "out": str(output_path),
        "pixels": int(cmap.labels.size),
        "classes_present": int(len(values[values != 0])),
        "histogram": {int(v): int(c) for v, c in zip(values, counts)},
    }, as_json)


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------


@main.command("segment")
@click.option("--in", "map_path", required=True, type=click.Path(path_type=Path),
              help="Categorical map header.")
@click.option("--image", "image_path", required=True, type=click.Path(path_type=Path),
              help="Calibrated image the map was classified from.")
@click.option("--out-prefix", "out_prefix", required=True, type=click.Path(path_type=Path))
@click.option("--adjacency", type=click.Choice(["4", "8"]), default="8")
@click.option("--stream", "strip_height", type=int, default=None,
              help="Feed labeling and band sums in strips of this many rows.")
@click.option("--json", "as_json", is_flag=True)
def cmd_segment(map_path, image_path, out_prefix, adjacency, strip_height, as_json):
    """Segment a categorical map and describe, rebuild and score it."""
    _fail_missing(map_path, "map header")
    _fail_missing(raster.payload_path(map_path), "map payload")
    _fail_missing(image_path, "image header")
    _fail_missing(raster.payload_path(image_path), "image payload")
    adjacency = int(adjacency)
    config = RunConfig("segment", {
        "in": str(map_path), "image": str(image_path),
        "out_prefix": str(out_prefix), "adjacency": adjacency,
        "stream": strip_height,
    })
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    try:
        cmap = read_map(map_path)
        if strip_height:
            labeler = TwoPassLabeler(cmap.width, adjacency)
            for r0 in range(0, cmap.height, strip_height):
                labeler.feed(cmap.labels[r0 : r0 + strip_height])
            seg = labeler.finalize()
            image = _read_image_streamed(image_path, strip_height)
        else:
            seg = connected_components(cmap, adjacency)
            image = raster.read_image(image_path)
        aura = cross_aura(cmap, adjacency)
        table = build_superpixel_table(cmap, seg, image, aura)
        recon = reconstruct(seg, table, image)
        rmse = rmse_map(image, recon)
        conserved = sum(r.pixel_count for r in table)
        if conserved != int(np.count_nonzero(seg.segment_ids)):
            raise SpecmapError("pixel-count conservation violated")
        paths = {
            "segmentation": Path(f"{out_prefix}.seg.hdr"),
            "aura": Path(f"{out_prefix}.aura.hdr"),
            "superpixels": Path(f"{out_prefix}.superpixels.csv"),
            "reconstruction": Path(f"{out_prefix}.recon.hdr"),
            "rmse": Path(f"{out_prefix}.rmse.hdr"),
        }
        write_segmentation(seg, paths["segmentation"])
        write_aura(aura, paths["aura"])
        write_superpixel_csv(table, paths["superpixels"])
        raster.write_image(recon, paths["reconstruction"])
        write_rmse(rmse, paths["rmse"])
    except SpecmapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    stats = rmse.stats()
    _write_manifest(Path(f"{out_prefix}.manifest.json"), config,
                    [map_path, image_path], list(paths.values()))
    _emit({
        "segments": seg.segment_count,
        "rmse_min": stats.minimum,
        "rmse_max": stats.maximum,
        "rmse_mean": stats.mean,
        "rmse_stdev": stats.stdev,
        **{k: str(v) for k, v in paths.items()},
    }, as_json)


def _read_image_streamed(image_path: Path, strip_height: int) -> raster.MultiSpectralImage:
    """Assemble a full image from ledgered strip reads (fixed input buffers)."""
    source = raster.open_image(image_path)
    samples = np.empty((len(source.bands), source.height, source.width))
    validity = np.empty((source.height, source.width), dtype=bool)
    for strip in raster.stream_strips(source, strip_height):
        r0 = strip.core_start
        r1 = r0 + strip.core_samples.shape[1]
        samples[:, r0:r1] = strip.core_samples
        validity[r0:r1] = strip.core_validity
    return raster.MultiSpectralImage(source.bands, samples, validity,
                                     source.dtype_name)


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


@main.command("compare")
@click.option("--test", "test_path", type=click.Path(path_type=Path), default=None)
@click.option("--ref", "ref_path", type=click.Path(path_type=Path), default=None)
@click.option("--counts", "counts_path", type=click.Path(path_type=Path), default=None,
              help="Contingency CSV; alternative to --test/--ref map pair.")
@click.option("--th1", type=float, default=0.09, show_default=True)
@click.option("--th2", type=float, default=0.06, show_default=True)
@click.option("--overrides", "overrides_path", type=click.Path(path_type=Path),
              default=None, help="Step-8 expert override CSV.")
@click.option("--translate-test", "translate_test", type=click.Path(path_type=Path),
              default=None, help="Legend mapping CSV applied to the test map.")
@click.option("--translate-ref", "translate_ref", type=click.Path(path_type=Path),
              default=None, help="Legend mapping CSV applied to the reference map.")
@click.option("--resolution", "resolution_path", type=click.Path(path_type=Path),
              default=None, help="Per-code resolution for ambiguous mappings.")
@click.option("--out-dir", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def cmd_compare(test_path, ref_path, counts_path, th1, th2, overrides_path,
                translate_test, translate_ref, resolution_path, out_dir, as_json):
    """Harmonize two legends and report the CVPAI2 association index."""
    if counts_path is None and (test_path is None or ref_path is None):
        click.echo("error: give either --counts or both --test and --ref", err=True)
        sys.exit(2)
    inputs = []
    for p, what in ((counts_path, "counts CSV"), (test_path, "test map header"),
                    (ref_path, "reference map header"),
                    (overrides_path, "overrides CSV"),
                    (translate_test, "test mapping CSV"),
                    (translate_ref, "reference mapping CSV"),
                    (resolution_path, "resolution CSV")):
        if p is not None:
            _fail_missing(p, what)
            inputs.append(p)
    config = RunConfig("compare", {
        "test": _s(test_path), "ref": _s(ref_path), "counts": _s(counts_path),
        "th1": th1, "th2": th2, "overrides": _s(overrides_path),
        "translate_test": _s(translate_test), "translate_ref": _s(translate_ref),
        "resolution": _s(resolution_path),
    })
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        resolution = (
            read_resolution(resolution_path) if resolution_path is not None else None
        )
        if counts_path is not None:
            table = read_contingency_csv(counts_path)
        else:
            test_map = read_map(test_path)
            ref_map = read_map(ref_path)
            if translate_test is not None:
                translation = build_translation(
                    read_legend_mapping(translate_test), resolution
                )
                test_map = translate_legend(test_map, translation)
            if translate_ref is not None:
                translation = build_translation(
                    read_legend_mapping(translate_ref), resolution
                )
                ref_map = translate_legend(ref_map, translation)
            table = build_contingency(test_map, ref_map)
        trace = harmonize(table, th1, th2)
        overrides = (
            read_overrides_csv(overrides_path) if overrides_path is not None else []
        )
        relation = apply_overrides(trace, overrides)
        index = cvpai2(relation)
        t, r = table.test_names, table.ref_names
        outputs = {
            "contingency": out_dir / "contingency.csv",
            "step2_joint": out_dir / "step2_joint.csv",
            "step3_ref_given_test": out_dir / "step3_ref_given_test.csv",
            "step4_kept_by_row": out_dir / "step4_kept_by_row.csv",
            "step5_test_given_ref": out_dir / "step5_test_given_ref.csv",
            "step6_kept_by_col": out_dir / "step6_kept_by_col.csv",
            "step7_temporary": out_dir / "step7_temporary.csv",
            "step8_final": out_dir / "step8_final.csv",
        }
        write_contingency_csv(outputs["contingency"], table)
        write_matrix_csv(outputs["step2_joint"], t, r, trace.joint)
        write_matrix_csv(outputs["step3_ref_given_test"], t, r, trace.ref_given_test)
        write_matrix_csv(outputs["step4_kept_by_row"], t, r, trace.kept_by_row, "int")
        write_matrix_csv(outputs["step5_test_given_ref"], t, r, trace.test_given_ref)
        write_matrix_csv(outputs["step6_kept_by_col"], t, r, trace.kept_by_col, "int")
        write_matrix_csv(outputs["step7_temporary"], t, r, trace.temporary, "int")
        write_relation_csv(outputs["step8_final"], relation)
        report = {
            "cvpai2": index,
            "correct_pairs": relation.correct_pairs,
            "th1": th1,
            "th2": th2,
            "total_count": table.total,
            "test_cardinality": len(t),
            "reference_cardinality": len(r),
            "audit": [dataclasses.asdict(ov) for ov in relation.audit],
        }
        report_path = out_dir / "report.json"
        report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        text_lines = [
            f"CVPAI2 = {index:.6f}",
            f"correct pairs CE = {relation.correct_pairs}",
            f"TH1 = {th1}, TH2 = {th2}",
            "audit:",
        ] + [
            f"  ({ov.test_label}, {ov.ref_label}) -> {ov.value}: {ov.note}"
            for ov in relation.audit
        ]
        text_path = out_dir / "report.txt"
        text_path.write_text("\n".join(text_lines) + "\n", encoding="utf-8")
    except SpecmapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    _write_manifest(out_dir / "manifest.json", config, inputs,
                    list(outputs.values()) + [report_path, text_path])
    _emit(report, as_json)


def _s(p: Path | None) -> str | None:
    return None if p is None else str(p)


# ---------------------------------------------------------------------------
# evidence
# ---------------------------------------------------------------------------


@main.command("evidence")
@click.option("--relation", "relation_path", required=True,
              type=click.Path(path_type=Path), help="Binary relation CSV.")
@click.option("--in", "vectors_path", required=True, type=click.Path(path_type=Path),
              help="Evidence vectors CSV (id,color_name,class_name,shape,texture,spatial).")
@click.option("--out", "output_path", required=True, type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def cmd_evidence(relation_path, vectors_path, output_path, as_json):
    """Combine evidence memberships with a legend relation (fuzzy min)."""
    _fail_missing(relation_path, "relation CSV")
    _fail_missing(vectors_path, "evidence CSV")
    config = RunConfig("evidence", {
        "relation": str(relation_path), "in": str(vectors_path),
        "out": str(output_path),
    })
    try:
        rel = read_relation_csv(relation_path)
        vectors = read_evidence_csv(vectors_path, rel)
        scored = [(vid, combine(ev, rel)) for vid, ev in vectors]
        write_scores_csv(output_path, scored)
    except SpecmapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    _write_manifest(output_path.with_suffix(".manifest.json"), config,
                    [relation_path, vectors_path], [output_path])
    _emit({"out": str(output_path), "vectors": len(scored)}, as_json)


if __name__ == "__main__":
    main()

"""Dataset construction: turn images + ROI annotations into canvas-sized
patch files with a manifest and a leakage-free patient split.

The input manifest is a CSV with header ``image,patient_id,x,y,width,height``;
one row per ROI, or a row with NA box fields for an image that contributes
negatives only.  Positive patches come from the ROIs; negatives are
sampled per image (one per ROI, or a configurable count for ROI-free
images) with sizes drawn from the pooled ROI size distribution.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass
from pathlib import Path

from .geometry import (
    DEFAULT_SPLIT_FRACTIONS,
    GeometryError,
    NoValidPatch,
    PatchPlan,
    RoiBox,
    extract,
    plan_patch,
    read_pgm,
    sample_negative,
    split_patients,
    write_pgm,
)

MANIFEST_HEADER = ("image", "patient_id", "x", "y", "width", "height")

PATCH_MANIFEST_HEADER = (
    "patch_id",
    "source_image",
    "patient_id",
    "label",
    "split",
    "x",
    "y",
    "width",
    "height",
    "scale",
    "scaled_width",
    "scaled_height",
    "pad_left",
    "pad_top",
)


class PrepError(ValueError):
    """Unreadable or malformed prep input."""


@dataclass(frozen=True)
class ImageEntry:
    path: str
    patient_id: str
    rois: tuple[RoiBox, ...]


def read_roi_manifest(path) -> list[ImageEntry]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise PrepError(f"cannot read {path}: {exc}") from exc
    if not rows or tuple(h.strip() for h in rows[0]) != MANIFEST_HEADER:
        raise PrepError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
    by_image: dict[tuple[str, str], list[RoiBox]] = {}
    order: list[tuple[str, str]] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise PrepError(f"{path}: line {lineno}: expected "
                            f"{len(MANIFEST_HEADER)} fields")
        image, patient = row[0].strip(), row[1].strip()
        key = (image, patient)
        if key not in by_image:
            by_image[key] = []
            order.append(key)
        box_fields = [f.strip() for f in row[2:6]]
        if all(f in ("", "NA") for f in box_fields):
            continue
        try:
            x, y, w, h = (int(f) for f in box_fields)
            by_image[key].append(RoiBox(x=x, y=y, width=w, height=h))
        except (ValueError, GeometryError) as exc:
            raise PrepError(f"{path}: line {lineno}: bad ROI box: {exc}") from exc
    return [ImageEntry(path=img, patient_id=pat, rois=tuple(by_image[(img, pat)]))
            for img, pat in order]


def run_prep(
    manifest_path,
    outdir,
    seed: int = 0,
    fractions=DEFAULT_SPLIT_FRACTIONS,
    negatives_per_image: int = 1,
    max_attempts: int = 1000,
    log=None,
) -> Path:
    """Extract all patches and write PGMs plus the patch manifest.

    Returns the manifest path.  Images where no acceptable negative exists
    are logged and skipped, never fatal.
    """
    entries = read_roi_manifest(manifest_path)
    if not entries:
        raise PrepError(f"{manifest_path}: no images listed")
    size_source = [(r.width, r.height) for e in entries for r in e.rois]
    if not size_source:
        raise PrepError(
            f"{manifest_path}: no ROIs anywhere; cannot derive a negative "
            "patch size distribution"
        )
    split = split_patients((e.patient_id for e in entries), fractions, seed)

    out = Path(outdir)
    patches_dir = out / "patches"
    patches_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for image_index, entry in enumerate(entries):
        image = read_pgm(entry.path)
        stem = Path(entry.path).stem
        for k, roi in enumerate(entry.rois):
            plan = plan_patch(roi)
            patch = extract(image, plan)
            patch_id = f"{stem}_roi{k}"
            write_pgm(patches_dir / f"{patch_id}.pgm", patch)
            rows.append(_manifest_row(patch_id, entry, 1, split, plan))
        n_negatives = len(entry.rois) if entry.rois else negatives_per_image
        for k in range(n_negatives):
            try:
                box = sample_negative(
                    image, entry.rois, size_source, seed=seed,
                    max_attempts=max_attempts,
                    stream=image_index * 1009 + k,
                )
            except NoValidPatch as exc:
                print(f"prep: {entry.path}: {exc}", file=log)
                continue
            plan = plan_patch(box)
            patch = extract(image, plan)
            patch_id = f"{stem}_neg{k}"
            write_pgm(patches_dir / f"{patch_id}.pgm", patch)
            rows.append(_manifest_row(patch_id, entry, 0, split, plan))

    manifest = out / "manifest.csv"
    with open(manifest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PATCH_MANIFEST_HEADER)
        writer.writerows(rows)
    return manifest


def _manifest_row(patch_id: str, entry: ImageEntry, label: int,
                  split: dict[str, str], plan: PatchPlan):
    box = plan.source
    return [
        patch_id,
        entry.path,
        entry.patient_id,
        label,
        split[entry.patient_id],
        box.x,
        box.y,
        box.width,
        box.height,
        format(plan.scale, ".10g"),
        plan.scaled_width,
        plan.scaled_height,
        plan.pad_left,
        plan.pad_top,
    ]

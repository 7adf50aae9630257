"""Patch-extraction geometry for building classifier datasets.

Regions of interest are mapped onto a square canvas (default 512x512) by
aspect-preserving box-average downsampling and centered zero padding.
Negative patches are rejection-sampled away from all annotated ROIs and
away from background air (boxes with >= 10% zero pixels are refused).
Patient splits are a pure function of (patient_id, seed) so no patient can
leak across splits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .rng import TAG_SAMPLER, substream

CANVAS = 512

DEFAULT_SPLIT_FRACTIONS = (0.556, 0.189, 0.255)
SPLIT_NAMES = ("train", "val", "test")


class GeometryError(ValueError):
    """Invalid box, plan, or image."""


class NoValidPatch(RuntimeError):
    """Rejection sampling exhausted its attempt budget."""


class PgmError(ValueError):
    """Unreadable or unsupported PGM data."""


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned pixel box; (x, y) is the top-left corner."""

    x: int
    y: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"degenerate box {self.width}x{self.height}")
        if self.x < 0 or self.y < 0:
            raise GeometryError("box origin must be nonnegative")

    def inside(self, image: np.ndarray) -> bool:
        h, w = image.shape
        return self.x + self.width <= w and self.y + self.height <= h

    def overlaps(self, other: "RoiBox") -> bool:
        return (
            self.x < other.x + other.width
            and other.x < self.x + self.width
            and self.y < other.y + other.height
            and other.y < self.y + self.height
        )


@dataclass(frozen=True)
class PatchPlan:
    """How one box lands on the canvas: scale, scaled size, pad offsets."""

    source: RoiBox
    scale: float
    scaled_width: int
    scaled_height: int
    pad_left: int
    pad_top: int
    canvas: int = CANVAS


def _round_half_up(numerator: int, denominator: int) -> int:
    return (2 * numerator + denominator) // (2 * denominator)


def plan_patch(roi: RoiBox, canvas: int = CANVAS) -> PatchPlan:
    """Plan the crop/scale/pad mapping of an ROI onto the canvas.

    Boxes already fitting the canvas keep scale 1; larger boxes shrink by
    canvas/max(w, h) with the longer side pinned to the canvas edge and the
    shorter side rounded half up (clamped to >= 1 pixel).
    """
    longest = max(roi.width, roi.height)
    if longest <= canvas:
        sw, sh = roi.width, roi.height
        scale = 1.0
    else:
        scale = canvas / longest
        sw = canvas if roi.width == longest else max(
            1, _round_half_up(roi.width * canvas, longest)
        )
        sh = canvas if roi.height == longest else max(
            1, _round_half_up(roi.height * canvas, longest)
        )
    return PatchPlan(
        source=roi,
        scale=scale,
        scaled_width=sw,
        scaled_height=sh,
        pad_left=(canvas - sw) // 2,
        pad_top=(canvas - sh) // 2,
        canvas=canvas,
    )


def extract(image: np.ndarray, plan: PatchPlan) -> np.ndarray:
    """Apply a plan: crop, box-average downsample, center on a zero canvas."""
    box = plan.source
    if not box.inside(image):
        raise GeometryError(f"plan source {box} lies outside the image")
    crop = image[box.y : box.y + box.height, box.x : box.x + box.width]
    if (plan.scaled_height, plan.scaled_width) == crop.shape:
        placed = crop
    else:
        placed = kernels.box_downsample(crop, plan.scaled_height, plan.scaled_width)
    out = np.zeros((plan.canvas, plan.canvas), dtype=image.dtype)
    out[
        plan.pad_top : plan.pad_top + plan.scaled_height,
        plan.pad_left : plan.pad_left + plan.scaled_width,
    ] = placed
    return out


def zero_fraction(image: np.ndarray, box: RoiBox) -> float:
    """Fraction of exactly-zero pixels inside the box."""
    if not box.inside(image):
        raise GeometryError(f"box {box} lies outside the image")
    window = image[box.y : box.y + box.height, box.x : box.x + box.width]
    return float(np.count_nonzero(window == 0) / window.size)


def sample_negative(
    image: np.ndarray,
    rois: Sequence[RoiBox],
    size_source: Sequence[tuple[int, int]],
    seed: int = 0,
    max_attempts: int = 1000,
    zero_limit: float = 0.10,
    stream: int = 0,
) -> RoiBox:
    """Sample a tissue box disjoint from every ROI.

    Sizes (width, height) are drawn jointly from the empirical size list;
    candidates touching an ROI or containing >= zero_limit zero pixels are
    rejected.  Raises NoValidPatch when the attempt budget runs out.
    """
    if not size_source:
        raise GeometryError("size_source must be nonempty")
    h, w = image.shape
    # summed-area table of zero pixels makes the tissue gate O(1) per probe
    zeros = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(image == 0, axis=0), axis=1, out=zeros[1:, 1:])
    gen = substream(seed, TAG_SAMPLER, stream)
    sizes = np.asarray(size_source, dtype=np.int64)
    for _ in range(max_attempts):
        bw, bh = (int(v) for v in sizes[int(gen.integers(0, len(sizes)))])
        if bw > w or bh > h or bw < 1 or bh < 1:
            continue
        x = int(gen.integers(0, w - bw + 1))
        y = int(gen.integers(0, h - bh + 1))
        box = RoiBox(x=x, y=y, width=bw, height=bh)
        if any(box.overlaps(r) for r in rois):
            continue
        n_zero = int(
            zeros[y + bh, x + bw] - zeros[y, x + bw] - zeros[y + bh, x] + zeros[y, x]
        )
        if n_zero / (bw * bh) >= zero_limit:
            continue
        return box
    raise NoValidPatch(
        f"no acceptable box after {max_attempts} attempts "
        f"(rois={len(rois)}, zero_limit={zero_limit})"
    )


def split_patients(
    patient_ids: Iterable[str],
    fractions: Sequence[float] = DEFAULT_SPLIT_FRACTIONS,
    seed: int = 0,
) -> dict[str, str]:
    """Assign each patient to train/val/test.

    Assignment hashes (seed, patient_id) to a uniform point in [0, 1) and
    buckets it by the cumulative fractions, so it depends on nothing else:
    adding or removing patients never moves the others.
    """
    fractions = tuple(fractions)
    if len(fractions) != len(SPLIT_NAMES):
        raise GeometryError(f"expected {len(SPLIT_NAMES)} fractions")
    if any(f <= 0 for f in fractions):
        raise GeometryError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise GeometryError(f"split fractions sum to {sum(fractions)!r}, not 1")
    edges = np.cumsum(fractions)
    out: dict[str, str] = {}
    for pid in patient_ids:
        digest = hashlib.blake2b(
            f"{seed}:{pid}".encode("utf-8"), digest_size=8
        ).digest()
        u = int.from_bytes(digest, "big") / 2**64
        out[pid] = SPLIT_NAMES[int(np.searchsorted(edges, u, side="right").clip(0, 2))]
    return out


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM into a uint8 or uint16 array."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise PgmError(f"cannot read {path}: {exc}") from exc
    if not data.startswith(b"P5"):
        raise PgmError(f"{path}: not a binary PGM (P5) file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                raise PgmError(f"{path}: truncated header")
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(data[start:pos]))
        except ValueError as exc:
            raise PgmError(f"{path}: bad header token {data[start:pos]!r}") from exc
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise PgmError(f"{path}: bad dimensions {width}x{height} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise PgmError(f"{path}: expected {need} pixel bytes, got {len(raw)}")
    pixels = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return pixels.astype(np.uint16) if maxval > 255 else pixels.copy()


def write_pgm(path, image: np.ndarray, maxval: int | None = None) -> None:
    """Write a 2D uint8/uint16 array as binary PGM."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise PgmError("PGM images are 2D")
    if maxval is None:
        maxval = 255 if image.dtype == np.uint8 else 65535
    if not 0 < maxval < 65536:
        raise PgmError(f"bad maxval {maxval}")
    if image.size and int(image.max()) > maxval:
        raise PgmError("pixel values exceed maxval")
    h, w = image.shape
    payload = (
        image.astype(">u2").tobytes() if maxval > 255 else image.astype("u1").tobytes()
    )
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(payload)

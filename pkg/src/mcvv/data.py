"""Synthetic video cohorts and the preprocessing geometry around them.

Covers face-window filtering by IoU, trimming, fixed-length segmentation,
clip augmentation, subject-disjoint fold planning, and a generator for
imbalanced synthetic cohorts where one class carries a planted oscillating
patch. Clips live on disk as raw little-endian float32 tensors plus a CSV
manifest.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

LABEL_NC = 0
LABEL_MCI = 1
LABEL_NAMES = {LABEL_NC: "NC", LABEL_MCI: "MCI"}
LABEL_IDS = {v: k for k, v in LABEL_NAMES.items()}

IOU_KEEP_THRESHOLD = 0.05
TRIM_HEAD_SECONDS = 180.0
TRIM_TAIL_SECONDS = 150.0
ROTATION_MAX_DEG = 15.0
CROP_RATIO = 0.875

# Planted class-1 signal: a centered patch oscillating at this many cycles per clip.
SIGNATURE_CYCLES = 2.0

TENSOR_FILE_MAGIC = b"MCVV"


# -- bounding boxes and per-frame filtering ------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {(self.x0, self.y0, self.x1, self.y1)}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area, in [0, 1]."""
    ix = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


@dataclass(frozen=True)
class FrameDecision:
    keep: bool
    index: int | None = None  # which box to keep, when keep is True


def filter_frame(boxes: list[BoundingBox]) -> FrameDecision:
    """Keep the larger of two face windows when they barely overlap.

    Exactly two boxes are expected (two speakers); any other count makes the
    frame unusable. Overlap at or above the IoU threshold drops the frame.
    """
    if len(boxes) != 2:
        logger.warning("filter_frame: expected 2 boxes, got %d; dropping frame", len(boxes))
        return FrameDecision(keep=False)
    if iou(boxes[0], boxes[1]) < IOU_KEEP_THRESHOLD:
        bigger = 0 if boxes[0].area >= boxes[1].area else 1
        return FrameDecision(keep=True, index=bigger)
    return FrameDecision(keep=False)


# -- trimming and segmentation ---------------------------------------------------


def trim_video(n_frames: int, fps: float) -> range:
    """Frame index range left after dropping the lead-in and tail; may be empty."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    start = math.ceil(TRIM_HEAD_SECONDS * fps)
    stop = n_frames - math.ceil(TRIM_TAIL_SECONDS * fps)
    return range(start, stop)


def segment_video(frames: np.ndarray, clip_len: int) -> list[np.ndarray]:
    """Split into floor(N / L) consecutive non-overlapping clips; remainder dropped."""
    if clip_len < 1:
        raise ValueError(f"clip_len must be >= 1, got {clip_len}")
    n = frames.shape[0] // clip_len
    return [frames[i * clip_len:(i + 1) * clip_len] for i in range(n)]


# -- augmentation -------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentParams:
    flip_h: bool = False
    flip_v: bool = False
    angle_deg: float = 0.0
    crop: bool = False


def sample_augment_params(rng: np.random.Generator) -> AugmentParams:
    return AugmentParams(
        flip_h=bool(rng.random() < 0.5),
        flip_v=bool(rng.random() < 0.5),
        angle_deg=float(rng.uniform(-ROTATION_MAX_DEG, ROTATION_MAX_DEG)),
        crop=bool(rng.random() < 0.5),
    )


def apply_augment(frames: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply one transform sample identically to every frame of a [L,H,W,C] clip."""
    out = frames
    if params.flip_h:
        out = out[:, :, ::-1, :]
    if params.flip_v:
        out = out[:, ::-1, :, :]
    if params.angle_deg != 0.0:
        out = ndimage.rotate(out, params.angle_deg, axes=(1, 2),
                             reshape=False, order=1, mode="nearest")
    if params.crop:
        _, height, width, _ = out.shape
        ch = max(1, round(height * CROP_RATIO))
        cw = max(1, round(width * CROP_RATIO))
        r0 = (height - ch) // 2
        c0 = (width - cw) // 2
        cropped = out[:, r0:r0 + ch, c0:c0 + cw, :]
        out = ndimage.zoom(cropped, (1.0, height / ch, width / cw, 1.0),
                           order=1, mode="nearest")
        if out.shape != frames.shape:
            raise RuntimeError(f"crop-resize produced {out.shape}, expected {frames.shape}")
    return np.ascontiguousarray(out, dtype=frames.dtype)


def augment_clip(frames: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return apply_augment(frames, sample_augment_params(rng))


# -- fold planning ----------------------------------------------------------------------


@dataclass
class FoldPlan:
    k: int
    l_fold: int
    folds: list[list[str]]                 # fold index -> subject ids
    assignment: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.assignment = {s: i for i, fold in enumerate(self.folds) for s in fold}


def plan_folds(subject_ids: list[str], l_fold: int, seed: int) -> FoldPlan:
    """Subject-disjoint contiguous folds of l_fold subjects each (one video per
    subject); K = floor(n / l_fold); leftovers join the last fold."""
    n = len(subject_ids)
    if l_fold < 1:
        raise ValueError(f"l_fold must be >= 1, got {l_fold}")
    if n < l_fold:
        raise ValueError(f"{n} videos cannot fill a fold of {l_fold}")
    k = n // l_fold
    rng = np.random.default_rng(seed)
    order = [subject_ids[i] for i in rng.permutation(n)]
    folds = [order[i * l_fold:(i + 1) * l_fold] for i in range(k)]
    folds[-1].extend(order[k * l_fold:])
    return FoldPlan(k=k, l_fold=l_fold, folds=folds)


# -- tensor files (also used for checkpoints) ----------------------------------------------


def write_tensor_file(path: Path | str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write(TENSOR_FILE_MAGIC)
        f.write(np.asarray([arr.ndim], dtype="<u4").tobytes())
        f.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        f.write(arr.tobytes())


def read_tensor_file(path: Path | str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TENSOR_FILE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        ndim = int(np.frombuffer(f.read(4), dtype="<u4")[0])
        shape = tuple(int(x) for x in np.frombuffer(f.read(4 * ndim), dtype="<u4"))
        count = int(np.prod(shape)) if shape else 1
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return data.astype(np.float32)


# -- synthetic cohorts ------------------------------------------------------------------------


@dataclass
class CohortSpec:
    mci_subjects: int = 20
    nc_subjects: int = 12
    frames_min: int = 128
    frames_max: int = 256
    clip_len: int = 16
    height: int = 64
    width: int = 64
    channels: int = 3
    strength: float = 0.35     # oscillation amplitude of the planted patch
    rho: float = 0.0           # fraction of class-1 clips left signature-free
    noise: float = 0.05        # pixel noise sigma
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 <= self.rho < 1.0):
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if self.mci_subjects < 1 or self.nc_subjects < 1:
            raise ValueError("each class needs at least one subject")
        if self.frames_min > self.frames_max:
            raise ValueError("frames_min > frames_max")
        if self.frames_min < self.clip_len:
            raise ValueError("frames_min below clip_len would yield empty subjects")


@dataclass(frozen=True)
class ClipRecord:
    subject_id: str
    clip_path: str   # relative to the manifest directory
    label: int
    clip_index: int


def signature_region(height: int, width: int) -> tuple[slice, slice]:
    """Rows/cols of the planted patch: the centered half of the frame."""
    r0, c0 = height // 4, width // 4
    return slice(r0, r0 + height // 2), slice(c0, c0 + width // 2)


def signature_wave(clip_len: int, strength: float) -> np.ndarray:
    t = np.arange(clip_len, dtype=np.float64)
    return strength * np.sin(2.0 * math.pi * SIGNATURE_CYCLES * t / clip_len)


def _make_clip(spec: CohortSpec, rng: np.random.Generator, with_signature: bool) -> np.ndarray:
    shape = (spec.clip_len, spec.height, spec.width, spec.channels)
    frames = 0.5 + spec.noise * rng.standard_normal(shape)
    if with_signature:
        rows, cols = signature_region(spec.height, spec.width)
        wave = signature_wave(spec.clip_len, spec.strength)
        frames[:, rows, cols, :] += wave[:, None, None, None]
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def generate_synthetic_cohort(spec: CohortSpec, out_dir: Path | str) -> Path:
    """Write clip files plus manifest.csv under out_dir; returns the manifest path.

    Class-1 subjects carry the oscillating-patch signature on all but a rho
    fraction of their clips (negative samples); class-0 clips are noise only.
    Per-subject clip counts vary across the configured frame range.
    """
    spec.validate()
    out_dir = Path(out_dir)
    clip_dir = out_dir / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    subjects = [(f"mci{i:02d}", LABEL_MCI) for i in range(spec.mci_subjects)]
    subjects += [(f"nc{i:02d}", LABEL_NC) for i in range(spec.nc_subjects)]

    records: list[ClipRecord] = []
    mci_clips_seen = 0
    negatives_assigned = 0
    for subject_id, label in subjects:
        n_frames = int(rng.integers(spec.frames_min, spec.frames_max + 1))
        n_clips = n_frames // spec.clip_len

        negative = np.zeros(n_clips, dtype=bool)
        if label == LABEL_MCI:
            # Cumulative-quota rounding keeps the class-wide negative fraction
            # within one clip of rho while staying within one clip per subject.
            target = round(spec.rho * (mci_clips_seen + n_clips)) - negatives_assigned
            target = max(0, min(n_clips, target))
            negative[rng.permutation(n_clips)[:target]] = True
            mci_clips_seen += n_clips
            negatives_assigned += target

        for clip_index in range(n_clips):
            with_signature = label == LABEL_MCI and not negative[clip_index]
            frames = _make_clip(spec, rng, with_signature)
            rel = f"clips/{subject_id}_{clip_index:04d}.mcvv"
            write_tensor_file(out_dir / rel, frames)
            records.append(ClipRecord(subject_id, rel, label, clip_index))

    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["subject_id", "clip_path", "label", "clip_index"])
        for r in records:
            writer.writerow([r.subject_id, r.clip_path, LABEL_NAMES[r.label], r.clip_index])
    return manifest


def read_manifest(manifest_path: Path | str) -> list[ClipRecord]:
    records = []
    with open(manifest_path, newline="") as f:
        for row in csv.DictReader(f):
            records.append(ClipRecord(
                subject_id=row["subject_id"],
                clip_path=row["clip_path"],
                label=LABEL_IDS[row["label"]],
                clip_index=int(row["clip_index"]),
            ))
    return records


class Cohort:
    """Manifest plus lazily cached clip frames."""

    def __init__(self, manifest_path: Path | str):
        self.manifest_path = Path(manifest_path)
        self.root = self.manifest_path.parent
        self.records = read_manifest(self.manifest_path)
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.records)

    def frames(self, index: int) -> np.ndarray:
        if index not in self._cache:
            rec = self.records[index]
            self._cache[index] = read_tensor_file(self.root / rec.clip_path)
        return self._cache[index]

    def subject_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.subject_id, None)
        return list(seen)

    def subject_label(self, subject_id: str) -> int:
        for r in self.records:
            if r.subject_id == subject_id:
                return r.label
        raise KeyError(subject_id)

    def clips_of(self, subject_id: str) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.subject_id == subject_id]

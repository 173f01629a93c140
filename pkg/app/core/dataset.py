"""
Dataset manifest handling.

A manifest is a JSON-lines file, one sample per line::

    {"id": "s0001", "image": "images/s0001.png", "masks": {"fish": "masks/s0001_fish.png"},
     "edge": "edges/s0001.png", "split": "train"}

Paths are relative to the manifest file. Masks are 8-bit PNGs holding only
0 and 255. A record may list several classes, each with its own mask, and
expands to one (image, label, mask) training triple per class.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import zoom

from app.core.validators import normalize_label, validate_class_label
from app.exceptions.custom_exceptions import (
    InputError,
    ManifestValidationError,
    MissingMaskError,
    NonBinaryMaskError,
    SizeMismatchError,
)
from app.utils.file_manager import read_gray_u8, read_image_rgb

logger = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "test")
# values of the "row" column of a metrics table
SAMPLE_ROW = "sample"
SUMMARY_ROW = "summary"


@dataclass
class SampleRecord:
    id: str
    image_path: str
    mask_paths: Dict[str, str]
    edge_path: str
    class_labels: List[str]
    split_tag: str = "train"
    source: Optional[str] = None

    def to_json(self, base_dir: str) -> Dict:
        def rel(path: str) -> str:
            return os.path.relpath(path, base_dir).replace(os.sep, "/")

        data = {
            "id": self.id,
            "image": rel(self.image_path),
            "masks": {label: rel(self.mask_paths[label]) for label in self.class_labels},
            "edge": rel(self.edge_path),
            "split": self.split_tag,
        }
        if self.source:
            data["source"] = self.source
        return data


@dataclass
class TrainingTriple:
    record_id: str
    image_path: str
    label: str
    mask_path: str
    edge_path: str


@dataclass
class SplitReport:
    seen_classes: List[str] = field(default_factory=list)
    unseen_classes: List[str] = field(default_factory=list)
    seen_samples: List[str] = field(default_factory=list)
    unseen_samples: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "seen_classes": self.seen_classes,
            "unseen_classes": self.unseen_classes,
            "seen_samples": self.seen_samples,
            "unseen_samples": self.unseen_samples,
        }


@dataclass
class HardNormalReport:
    threshold: float
    normal: List[str] = field(default_factory=list)
    hard: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {"threshold": self.threshold, "normal": self.normal, "hard": self.hard}


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------


def _resolve(base_dir: str, path: str) -> str:
    return os.path.normpath(os.path.join(base_dir, str(path)))


def _parse_record(data: Dict, base_dir: str, line_no: int) -> SampleRecord:
    if not isinstance(data, dict):
        raise ManifestValidationError(f"line {line_no}", "record must be a JSON object")
    record_id = str(data.get("id") or f"line {line_no}")
    for key in ("id", "image", "masks", "edge"):
        if key not in data:
            raise ManifestValidationError(record_id, f"missing field '{key}'")
    if not isinstance(data["masks"], dict) or not data["masks"]:
        raise ManifestValidationError(record_id, "'masks' must be a non-empty object of label -> path")

    masks = {}
    for raw_label, path in data["masks"].items():
        label = normalize_label(raw_label)
        if not validate_class_label(label):
            raise ManifestValidationError(record_id, f"invalid class label {raw_label!r}")
        masks[label] = _resolve(base_dir, path)

    labels = [normalize_label(l) for l in data.get("labels", list(data["masks"].keys()))]
    if not labels:
        raise ManifestValidationError(record_id, "at least one class label is required")
    for label in labels:
        if label not in masks:
            raise MissingMaskError(record_id, f"no mask for class '{label}'")

    split_tag = data.get("split", "train")
    if split_tag not in SPLIT_TAGS:
        raise ManifestValidationError(record_id, f"split must be one of {SPLIT_TAGS}, got {split_tag!r}")

    return SampleRecord(
        id=record_id,
        image_path=_resolve(base_dir, data["image"]),
        mask_paths=masks,
        edge_path=_resolve(base_dir, data["edge"]),
        class_labels=labels,
        split_tag=split_tag,
        source=data.get("source"),
    )


def validate_record(record: SampleRecord) -> None:
    """Check files exist, masks hold only {0, 255} and all sizes agree"""
    if not os.path.isfile(record.image_path):
        raise ManifestValidationError(record.id, f"image not found: {record.image_path}")
    image_size = read_image_rgb(record.image_path).shape[1:]

    for label in record.class_labels:
        path = record.mask_paths[label]
        if not os.path.isfile(path):
            raise MissingMaskError(record.id, f"mask for class '{label}' not found: {path}")
        mask = read_gray_u8(path)
        if not np.all((mask == 0) | (mask == 255)):
            raise NonBinaryMaskError(record.id, f"non-binary mask for class '{label}' (values {np.unique(mask)[:6]})")
        if mask.shape != image_size:
            raise SizeMismatchError(record.id, f"mask '{label}' is {mask.shape}, image is {image_size}")

    if not os.path.isfile(record.edge_path):
        raise ManifestValidationError(record.id, f"edge map not found: {record.edge_path}")
    edge = read_gray_u8(record.edge_path)
    if edge.shape != image_size:
        raise SizeMismatchError(record.id, f"edge map is {edge.shape}, image is {image_size}")


def load_manifest(path: str, validate: bool = True) -> List[SampleRecord]:
    """Read and validate a JSON-lines manifest"""
    logger.info(f"[load_manifest] - Loading manifest: {path}")
    if not os.path.isfile(path):
        raise InputError(f"manifest not found: {path}")
    base_dir = os.path.dirname(os.path.abspath(path))

    records = []
    seen_ids = set()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestValidationError(f"line {line_no}", f"invalid JSON: {e}") from e
            record = _parse_record(data, base_dir, line_no)
            if record.id in seen_ids:
                raise ManifestValidationError(record.id, "duplicate record id")
            seen_ids.add(record.id)
            if validate:
                validate_record(record)
            records.append(record)

    logger.info(f"[load_manifest] - {len(records)} records, {len(expand_triples(records))} training triples")
    return records


def write_manifest(records: Sequence[SampleRecord], path: str) -> str:
    base_dir = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_json(base_dir), sort_keys=True) + "\n")
    logger.info(f"[write_manifest] - Wrote {len(records)} records to {path}")
    return path


def expand_triples(records: Iterable[SampleRecord]) -> List[TrainingTriple]:
    """One (image, label, mask) triple per class of every record"""
    return [
        TrainingTriple(r.id, r.image_path, label, r.mask_paths[label], r.edge_path)
        for r in records
        for label in r.class_labels
    ]


def load_triples(path: str) -> List[TrainingTriple]:
    return expand_triples(load_manifest(path))


def is_synthetic(records: Iterable[SampleRecord]) -> bool:
    return any(r.source == "synthetic" for r in records)


def read_sample(triple: TrainingTriple, side: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Image [3, S, S] in [0, 1] and mask [S, S] in {0, 1}, resized to ``side`` when given"""
    image = read_image_rgb(triple.image_path)
    mask = (read_gray_u8(triple.mask_path) >= 128).astype(np.float64)
    if side is not None and image.shape[1:] != (side, side):
        h, w = image.shape[1:]
        image = np.clip(zoom(image, (1, side / h, side / w), order=1), 0.0, 1.0)
        mask = zoom(mask, (side / h, side / w), order=0)
    return image, mask


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def split_seen_unseen(train: Sequence[SampleRecord], test: Sequence[SampleRecord]) -> SplitReport:
    """A test sample is seen iff every one of its labels occurs in the training set"""
    train_labels = {label for r in train for label in r.class_labels}
    test_labels = {label for r in test for label in r.class_labels}
    seen_samples, unseen_samples = [], []
    for record in test:
        if all(label in train_labels for label in record.class_labels):
            seen_samples.append(record.id)
        else:
            unseen_samples.append(record.id)
    report = SplitReport(
        seen_classes=sorted(test_labels & train_labels),
        unseen_classes=sorted(test_labels - train_labels),
        seen_samples=sorted(seen_samples),
        unseen_samples=sorted(unseen_samples),
    )
    logger.info(
        f"[split_seen_unseen] - seen: {len(report.seen_samples)} samples / {len(report.seen_classes)} classes, "
        f"unseen: {len(report.unseen_samples)} samples / {len(report.unseen_classes)} classes"
    )
    return report


def hard_normal_split(rows: Iterable[Dict], threshold: float = 0.9) -> HardNormalReport:
    """Per-sample rows scoring S_m >= threshold are Normal, the rest Hard; summary rows are skipped"""
    report = HardNormalReport(threshold=threshold)
    for row in rows:
        if not {"row", "id", "s_measure"} <= set(row):
            raise InputError(f"metrics row needs 'row', 'id' and 's_measure' columns, got {sorted(row)}")
        if row["row"] != SAMPLE_ROW:
            continue
        bucket = report.normal if float(row["s_measure"]) >= threshold else report.hard
        bucket.append(str(row["id"]))
    report.normal.sort()
    report.hard.sort()
    return report


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
    hflip: bool = True,
    random_crop: bool = False,
    color_jitter: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """Random horizontal flip, crop-and-resize and brightness/contrast jitter"""
    if hflip and rng.random() < 0.5:
        image = image[:, :, ::-1]
        mask = mask[:, ::-1]
    if random_crop:
        h, w = mask.shape
        size = int(rng.integers(int(0.8 * min(h, w)), min(h, w) + 1))
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        image = image[:, top : top + size, left : left + size]
        mask = mask[top : top + size, left : left + size]
        image = np.clip(zoom(image, (1, h / size, w / size), order=1), 0.0, 1.0)
        mask = zoom(mask, (h / size, w / size), order=0)
    if color_jitter:
        brightness = rng.uniform(0.8, 1.2)
        contrast = rng.uniform(0.8, 1.2)
        mean = image.mean()
        image = np.clip((image - mean) * contrast + mean * brightness, 0.0, 1.0)
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)

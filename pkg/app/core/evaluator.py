"""
Checkpoint evaluation: P_1 probability maps for every (image, label) triple of
a manifest, the five metrics per sample and in aggregate, optional seen/unseen
buckets and optional feature dumps.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from config import CONFIG
from app.core.cgd import CGNet, FeatureBundle
from app.core.checkpoint import load_checkpoint
from app.core.dataset import (
    SAMPLE_ROW,
    SUMMARY_ROW,
    expand_triples,
    is_synthetic,
    load_manifest,
    read_sample,
    split_seen_unseen,
)
from app.core.metrics import MetricReport, average_reports, evaluate_pair
from app.core.run_config import RunConfig
from app.core.tensor import Tensor, sigmoid
from app.core.trainer import RUN_CONFIG_NAME
from app.exceptions.custom_exceptions import InputError
from app.utils.file_manager import ensure_directory_exists, write_csv, write_gray_u8
from app.utils.formatters import format_metric_table, sanitize_filename

logger = logging.getLogger(__name__)

SYNTHETIC_CAVEAT = (
    "NOTE: evaluated on synthetic data with mock encoders. These numbers verify the pipeline at desk "
    "scale and are not comparable with benchmark results on real camouflage datasets."
)
METRIC_CSV_COLUMNS = ["row", "id", "label", "s_measure", "e_measure_mean", "f_weighted", "f_mean", "mae", "n_samples"]


@dataclass
class EvaluationResult:
    rows: List[Dict] = field(default_factory=list)
    mean: Optional[MetricReport] = None
    buckets: Dict[str, MetricReport] = field(default_factory=dict)
    csv_path: Optional[str] = None
    synthetic: bool = False

    def table(self) -> str:
        named = [("mean", self.mean.to_dict())] + [(k, v.to_dict()) for k, v in self.buckets.items()]
        return format_metric_table(named)

    def to_dict(self) -> Dict:
        return {
            "mean": self.mean.to_dict(),
            "buckets": {k: v.to_dict() for k, v in self.buckets.items()},
            "samples": self.rows,
            "csv": self.csv_path,
            "synthetic": self.synthetic,
            "caveat": SYNTHETIC_CAVEAT if self.synthetic else None,
        }


def resolve_run_config(checkpoint_path: str, config_path: Optional[str] = None) -> RunConfig:
    """Explicit config file, else the run_config.json written next to the checkpoint, else defaults"""
    if config_path:
        return RunConfig.from_file(config_path)
    saved = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), RUN_CONFIG_NAME)
    if os.path.isfile(saved):
        with open(saved, encoding="utf-8") as f:
            data = json.load(f)
        data.pop("paths", None)
        logger.info(f"[resolve_run_config] - Using training config {saved}")
        return RunConfig.from_dict(data)
    logger.warning("[resolve_run_config] - No config given or saved; using defaults")
    return RunConfig()


def load_model(config: RunConfig, checkpoint_path: str) -> CGNet:
    model = CGNet.from_config(config)
    load_checkpoint(model.params, checkpoint_path)
    return model


def feature_to_u8(feature: Tensor) -> np.ndarray:
    """Channel mean of the first sample, min-max scaled to 0..255"""
    plane = feature.values[0].mean(axis=0)
    lo, hi = plane.min(), plane.max()
    if hi - lo <= 0:
        return np.zeros(plane.shape, dtype=np.uint8)
    return np.round((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)


def dump_features(bundle: FeatureBundle, out_dir: str, sample_name: str) -> List[str]:
    ensure_directory_exists(out_dir)
    paths = []
    for name, feature in bundle.maps().items():
        path = os.path.join(out_dir, f"{sample_name}_{name}.png")
        write_gray_u8(feature_to_u8(feature), path)
        paths.append(path)
    logger.debug(f"[dump_features] - {len(paths)} maps for {sample_name}")
    return paths


def evaluate(
    config: RunConfig,
    checkpoint_path: str,
    manifest_path: str,
    out_dir: str,
    train_manifest: Optional[str] = None,
    features: bool = False,
    progress_hook: Optional[Callable[[Dict], None]] = None,
    show_progress: bool = False,
) -> EvaluationResult:
    """Score P_1 against each triple's mask at the detector resolution"""
    model = load_model(config, checkpoint_path)
    records = load_manifest(manifest_path)
    triples = expand_triples(records)
    if not triples:
        raise InputError(f"manifest has no samples to evaluate: {manifest_path}")
    ensure_directory_exists(out_dir)
    prediction_dir = os.path.join(out_dir, "predictions")
    ensure_directory_exists(prediction_dir)

    multi = {r.id for r in records if len(r.class_labels) > 1}
    side = config.encoder.detector_side
    reports: List[MetricReport] = []
    rows: List[Dict] = []
    by_record: Dict[str, List[MetricReport]] = {}
    for index, triple in enumerate(tqdm(triples, desc="eval", unit="sample", disable=not show_progress)):
        image, mask = read_sample(triple, side=side)
        predictions, bundle = model(Tensor(image[None]), [triple.label])
        prob = sigmoid(predictions.p1).values[0, 0]
        report = evaluate_pair(prob, mask)

        row_id = f"{triple.record_id}@{triple.label}" if triple.record_id in multi else triple.record_id
        name = sanitize_filename(row_id)
        write_gray_u8(np.round(prob * 255.0).astype(np.uint8), os.path.join(prediction_dir, f"{name}.png"))
        if features:
            dump_features(bundle, os.path.join(out_dir, "features"), name)

        reports.append(report)
        by_record.setdefault(triple.record_id, []).append(report)
        rows.append({"id": row_id, "label": triple.label, **report.to_dict()})
        if progress_hook:
            progress_hook({"status": "evaluating", "step": index + 1, "total": len(triples)})

    result = EvaluationResult(rows=rows, mean=average_reports(reports), synthetic=is_synthetic(records))
    if train_manifest:
        split = split_seen_unseen(load_manifest(train_manifest, validate=False), records)
        for bucket, ids in (("seen", split.seen_samples), ("unseen", split.unseen_samples)):
            bucket_reports = [r for i in ids for r in by_record[i]]
            if bucket_reports:
                result.buckets[bucket] = average_reports(bucket_reports)

    samples = [{"row": SAMPLE_ROW, **row} for row in rows]
    summary = [{"row": SUMMARY_ROW, "id": "mean", "label": "", **result.mean.to_dict()}]
    summary += [{"row": SUMMARY_ROW, "id": k, "label": "", **v.to_dict()} for k, v in result.buckets.items()]
    result.csv_path = os.path.join(out_dir, CONFIG["metrics_csv_name"])
    write_csv(samples + summary, result.csv_path, fieldnames=METRIC_CSV_COLUMNS)

    logger.info(f"[evaluate] - {len(rows)} samples scored\n{result.table()}")
    if result.synthetic:
        logger.warning(f"[evaluate] - {SYNTHETIC_CAVEAT}")
    if progress_hook:
        progress_hook({"status": "finished", "step": len(triples), "total": len(triples)})
    return result

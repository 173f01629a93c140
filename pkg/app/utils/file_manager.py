import csv
import os
import logging
from typing import Dict, List, Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)


def ensure_directory_exists(directory: str) -> None:
    """Create directory if it doesn't exist"""
    logger.debug(f"[ensure_directory_exists] - Checking directory: {directory}")
    try:
        os.makedirs(directory, exist_ok=True)
    except Exception as e:
        logger.error(f"[ensure_directory_exists] - Failed to create directory {directory}: {str(e)}")
        raise


def get_outputs_directory(base: str = None) -> str:
    """Get (and create) the outputs directory"""
    from config import CONFIG

    outputs_dir = base or os.path.join(os.getcwd(), CONFIG["outputs_dir"])
    ensure_directory_exists(outputs_dir)
    return outputs_dir


def read_image_rgb(path: str) -> np.ndarray:
    """PNG/JPEG to float64 [3, H, W] in [0, 1]"""
    with Image.open(path) as img:
        array = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(array.transpose(2, 0, 1))


def read_gray_u8(path: str) -> np.ndarray:
    """Single-channel 8-bit image as a uint8 [H, W] array"""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8).copy()


def write_image_rgb(array: np.ndarray, path: str) -> None:
    """Float [3, H, W] in [0, 1] to an 8-bit RGB PNG"""
    u8 = np.clip(np.round(np.asarray(array).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8).save(path, format="PNG")
    logger.debug(f"[write_image_rgb] - Wrote {path}")


def write_gray_u8(array: np.ndarray, path: str) -> None:
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path, format="PNG")
    logger.debug(f"[write_gray_u8] - Wrote {path}")


def write_csv(rows: Sequence[Dict], path: str, fieldnames: List[str] = None) -> None:
    """Write dict rows as CSV (columns in first-row order unless given)"""
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row.get(k)) for k in fieldnames})
    logger.info(f"[write_csv] - Wrote {len(rows)} rows to {path}")


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _csv_value(value):
    # full float precision
    if isinstance(value, float):
        return repr(value)
    return value

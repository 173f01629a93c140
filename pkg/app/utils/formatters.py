import re
from typing import Dict, Sequence, Tuple

# Benchmark column order
METRIC_COLUMNS = (
    ("s_measure", "S_m"),
    ("f_weighted", "F_b^w"),
    ("mae", "MAE"),
    ("e_measure_mean", "E_phi^m"),
    ("f_mean", "F_b^m"),
)


def format_metric(value: float, digits: int = 3) -> str:
    return f"{value:.{digits}f}"


def format_metric_table(rows: Sequence[Tuple[str, Dict[str, float]]], digits: int = 3) -> str:
    """Plain-text table of (row name, metric dict) in benchmark column order"""
    header = ["", *(label for _, label in METRIC_COLUMNS)]
    body = [[name, *(format_metric(float(m[key]), digits) for key, _ in METRIC_COLUMNS)] for name, m in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))) for r in [header, *body]]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def format_loss(row: Dict[str, float]) -> str:
    """One-line summary of a loss-trace row"""
    return f"step {int(row['step'])}: total={row['total']:.4f} bce={row['bce']:.4f} iou={row['iou']:.4f}"


def sanitize_filename(filename: str) -> str:
    """Make a class label or sample id safe to use in a file name"""
    filename = re.sub(r'[<>:"/\\|?*\s]+', "_", str(filename)).strip(" ._")
    return filename[:200] or "unnamed"

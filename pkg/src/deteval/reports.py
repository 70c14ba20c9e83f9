"""Serialization of evaluation outputs: CSV tables, JSON reports, SVG heatmaps.

All emitters are deterministic (no timestamps, fixed key order, fixed float
formatting), so repeated runs produce byte-identical files. Ratios print with
four decimal places.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import ParseError
from .matching import ConfusionMatrix
from .metrics import MetricsReport

LEFT_DETECTION = "left detection"
UNCLASSIFIED_DETECTION = "unclassified detection"

AGGREGATE_INDEX_ROWS = (
    ("Precision mAP", "map_50_95"),
    ("Precision mAP@.50IOU", "map_50"),
    ("Precision mAP@.75IOU", "map_75"),
    ("Precision mAP (large)", "map_large"),
    ("Precision mAP (medium)", "map_medium"),
    ("Precision mAP (small)", "map_small"),
    ("Recall AR@1", "ar_1"),
    ("Recall AR@10", "ar_10"),
    ("Recall AR@100", "ar_100"),
    ("Recall AR@100 (large)", "ar_100_large"),
    ("Recall AR@100 (medium)", "ar_100_medium"),
    ("Recall AR@100 (small)", "ar_100_small"),
)


def format_ratio(value: float) -> str:
    return f"{value:.4f}"


def _csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def per_class_csv(report: MetricsReport, labels) -> str:
    """Two-panel per-class table: class P/R rows on the left, the twelve
    aggregate indices on the right, padded to equal length."""
    aggregates = report.aggregate_fields()
    left = [
        [labels.name_of(m.class_id), format_ratio(m.precision_at_05),
         format_ratio(m.recall_at_05)]
        for m in report.per_class
    ]
    right = [
        [name, format_ratio(aggregates[key])] for name, key in AGGREGATE_INDEX_ROWS
    ]
    rows = [["tag", "precision_@0.5IOU", "recall_@0.5IOU", "Index", "value"]]
    for i in range(max(len(left), len(right))):
        l = left[i] if i < len(left) else ["", "", ""]
        r = right[i] if i < len(right) else ["", ""]
        rows.append(l + r)
    return _csv_text(rows)


def confusion_csv(cm: ConfusionMatrix) -> str:
    names = [name for _, name in cm.labels.entries]
    rows = [[""] + names + [LEFT_DETECTION]]
    for k, name in enumerate(names):
        rows.append([name] + [int(v) for v in cm.counts[k]])
    rows.append([UNCLASSIFIED_DETECTION] + [int(v) for v in cm.counts[-1]])
    return _csv_text(rows)


def parse_confusion_csv(text: str) -> tuple[list[str], np.ndarray]:
    """Read back a confusion matrix CSV; returns (class names, counts)."""
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise ParseError("confusion matrix csv has no data rows")
    header = rows[0]
    if header[-1] != LEFT_DETECTION or header[0] != "":
        raise ParseError("confusion matrix csv header is malformed")
    names = header[1:-1]
    n = len(names) + 1
    if len(rows) != n + 1:
        raise ParseError(
            f"confusion matrix csv has {len(rows) - 1} data rows, expected {n}"
        )
    counts = np.zeros((n, n), dtype=np.int64)
    for k, row in enumerate(rows[1:]):
        expected_label = names[k] if k < len(names) else UNCLASSIFIED_DETECTION
        if row[0] != expected_label or len(row) != n + 1:
            raise ParseError(f"confusion matrix csv row {k + 1} is malformed")
        try:
            counts[k] = [int(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"confusion matrix csv row {k + 1}: {exc}") from exc
    if (counts < 0).any():
        raise ParseError("confusion matrix csv contains negative counts")
    return names, counts


def report_json(report: MetricsReport, thresholds) -> str:
    doc = {
        "geometry_mode": report.geometry_mode,
        "algorithm": report.algorithm,
        "thresholds": {
            "iou": thresholds.iou_threshold,
            "confidence": thresholds.confidence_threshold,
        },
        "mask_fallback_items": report.mask_fallback_items,
        "per_class": [
            {
                "class_id": m.class_id,
                "precision_at_05": m.precision_at_05,
                "recall_at_05": m.recall_at_05,
                "support_gt": m.support_gt,
                "support_det": m.support_det,
                "precision_undefined": m.precision_undefined,
                "recall_undefined": m.recall_undefined,
            }
            for m in report.per_class
        ],
        "aggregates": report.aggregate_fields(),
    }
    return json.dumps(doc, indent=2) + "\n"


def matrix_svg(names: list[str], counts: np.ndarray) -> str:
    """Deterministic heatmap: one rect per cell, linear grayscale by count,
    the left-detection column and unclassified-detection row set apart by a
    gap. Counts are printed in the cells when the grid is at most 20x20."""
    n = counts.shape[0]
    cell = 34
    gap = 8
    left = 150
    top = 150
    grid_w = n * cell + gap
    grid_h = n * cell + gap
    width = left + grid_w + 10
    height = top + grid_h + 10
    peak = int(counts.max()) if counts.size else 0
    with_text = n <= 20

    row_labels = names + [UNCLASSIFIED_DETECTION]
    col_labels = names + [LEFT_DETECTION]

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="monospace" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for j, label in enumerate(col_labels):
        x = left + j * cell + cell // 2 + (gap if j == n - 1 else 0)
        parts.append(
            f'<text x="{x}" y="{top - 6}" text-anchor="start" '
            f'transform="rotate(-60 {x} {top - 6})">{_esc(label)}</text>'
        )
    for i, label in enumerate(row_labels):
        y = top + i * cell + cell // 2 + 4 + (gap if i == n - 1 else 0)
        parts.append(
            f'<text x="{left - 6}" y="{y}" text-anchor="end">{_esc(label)}</text>'
        )
    for i in range(n):
        for j in range(n):
            v = int(counts[i, j])
            shade = 255 - round(255 * v / peak) if peak else 255
            x = left + j * cell + (gap if j == n - 1 else 0)
            y = top + i * cell + (gap if i == n - 1 else 0)
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="rgb({shade},{shade},{shade})" stroke="rgb(200,200,200)"/>'
            )
            if with_text:
                color = "white" if shade < 110 else "black"
                parts.append(
                    f'<text x="{x + cell // 2}" y="{y + cell // 2 + 4}" '
                    f'text-anchor="middle" fill="{color}">{v}</text>'
                )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _esc(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)

"""Serialization of run outputs.

Floats are written with 17 significant digits so files round-trip to
the exact double and identical runs produce identical bytes. All
content is validated before the first file is opened; a failing run
leaves no partial output behind.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def fmt_float(value) -> str:
    return format(float(value), ".17g")


def mse(predicted, actual) -> float:
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape or predicted.size == 0:
        raise ValueError("mse needs two equal-length non-empty vectors")
    return float(np.mean((predicted - actual) ** 2))


def rmse(predicted, actual) -> float:
    return float(np.sqrt(mse(predicted, actual)))


def render_histogram(counts: dict[str, int]) -> dict:
    """Counts and normalized mass per structure label."""
    total = sum(counts.values())
    if total <= 0:
        raise ValueError("no recorded samples to histogram")
    return {
        "total_samples": total,
        "structures": {
            label: {"count": count, "mass": count / total}
            for label, count in counts.items()
        },
    }


def _render_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _render_csv(columns: dict[str, np.ndarray]) -> str:
    names = list(columns)
    arrays = [np.asarray(columns[name]) for name in names]
    length = arrays[0].size
    if length == 0:
        raise ValueError("no rows to write")
    for name, arr in zip(names, arrays):
        if arr.size != length:
            raise ValueError(f"column {name!r} length differs")
    lines = [",".join(names)]
    for i in range(length):
        lines.append(",".join(fmt_float(arr[i]) for arr in arrays))
    return "\n".join(lines) + "\n"


def emit_results(
    out_dir,
    histogram: dict[str, int] | None = None,
    predictions: dict[str, np.ndarray] | None = None,
    metrics: dict | None = None,
    partitions: list[dict] | None = None,
    traces: dict[str, dict[str, np.ndarray]] | None = None,
) -> list[Path]:
    """Write whichever outputs the task produced, then report the paths."""
    out_dir = Path(out_dir)
    rendered: list[tuple[str, str]] = []
    if histogram is not None:
        rendered.append(
            ("structure_histogram.json", _render_json(render_histogram(histogram)))
        )
    if predictions is not None:
        rendered.append(("predictions.csv", _render_csv(predictions)))
    if metrics is not None:
        if not metrics:
            raise ValueError("empty metrics payload")
        rendered.append(("metrics.json", _render_json(metrics)))
    if partitions is not None:
        if not partitions:
            raise ValueError("no recorded partitions")
        rendered.append(("partitions.json", _render_json(partitions)))
    if traces is not None:
        for name, columns in traces.items():
            rendered.append((f"hyper_traces_{name}.csv", _render_csv(columns)))
    if not rendered:
        raise ValueError("nothing to emit")
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in rendered:
        target = out_dir / name
        target.write_text(text)
        written.append(target)
    return written

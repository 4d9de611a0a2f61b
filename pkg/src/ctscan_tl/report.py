"""Text/CSV tables and static figures for evaluation reports and training runs."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import matplotlib
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .errors import RenderError
from .evaluation import METRICS, EvaluationReport

logger = logging.getLogger(__name__)

METRIC_LABELS = {"precision": "Precision", "recall": "Recall", "f1": "F1-Score",
                 "specificity": "Specificity", "accuracy": "Accuracy"}
FIGURE_FORMATS = ("png", "svg")

# keeps SVG element ids stable between runs
matplotlib.rcParams["svg.hashsalt"] = "ctscan-tl"


@dataclass
class ReportBundle:
    text: str = ""
    csv: str = ""
    figures: list = field(default_factory=list)
    files: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def round_half_away(value: float, digits: int = 2) -> str:
    """Round to ``digits`` decimals, halves away from zero (0.865 -> "0.87")."""
    return round_half_away_decimal(Decimal(repr(float(value))), digits)


def format_percent(value: float, digits: int = 2) -> str:
    return round_half_away_decimal(Decimal(repr(float(value))) * 100, digits) + "%"


def round_half_away_decimal(value: Decimal, digits: int) -> str:
    return str(value.quantize(Decimal(1).scaleb(-digits), rounding=ROUND_HALF_UP))


def table_rows(report: EvaluationReport):
    """Yield ``(class, metric, per_subset_values, average)`` in table order."""
    for name in report.class_names:
        for metric in METRICS:
            values = [getattr(s.metrics[name], metric) for s in report.per_subset]
            yield name, metric, values, report.averages["metrics"][name][metric]
    yield "overall", "accuracy", [s.accuracy for s in report.per_subset], \
        report.averages["accuracy"]


def render_table(report: EvaluationReport, precision_digits: int = 2):
    """Return ``(text_table, csv_text)``.

    The text table rounds half away from zero and shows accuracy as a
    percentage; the CSV keeps full precision so it parses back exactly.
    """
    n = len(report.per_subset)
    headers = ["Class", "Metric", *(f"Test{i}" for i in range(1, n + 1)), "Avg."]
    rows = []
    for name, metric, values, avg in table_rows(report):
        if metric == "accuracy":
            cells = [format_percent(v, precision_digits) for v in (*values, avg)]
            label = "Overall"
        else:
            cells = [round_half_away(v, precision_digits) for v in (*values, avg)]
            label = name
        rows.append([label, METRIC_LABELS[metric], *cells])
    widths = [max(len(str(r[i])) for r in [headers, *rows]) for i in range(len(headers))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    prev = None
    for row in rows:
        shown = list(row)
        if row[0] == prev:
            shown[0] = ""
        prev = row[0]
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(shown, widths)).rstrip())
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "metric", *(f"test{i}" for i in range(1, n + 1)), "avg"])
    for name, metric, values, avg in table_rows(report):
        writer.writerow([name, metric, *(repr(float(v)) for v in (*values, avg))])
    return text, buf.getvalue()


def parse_csv(text: str) -> dict:
    """Inverse of the CSV half of :func:`render_table`: ``{(class, metric): [values..., avg]}``."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header[:2] != ["class", "metric"] or header[-1] != "avg":
        raise ValueError(f"unexpected CSV header {header}")
    return {(row[0], row[1]): [float(v) for v in row[2:]] for row in reader if row}


def _save(fig: Figure, path: Path, fmt: str) -> None:
    FigureCanvasAgg(fig)
    metadata = {"Date": None} if fmt == "svg" else {"Software": None}
    try:
        fig.savefig(path, format=fmt, metadata=metadata)
    except OSError as exc:
        raise RenderError(f"cannot write figure {path}: {exc}") from exc


def _prepare_dir(out_dir) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RenderError(f"cannot create output directory {out_dir}: {exc}") from exc
    return out_dir


def emit_curves(history, out_dir, fmt: str = "png") -> list:
    """Loss and accuracy curves (train and validation) against epoch."""
    if fmt not in FIGURE_FORMATS:
        raise RenderError(f"unsupported figure format {fmt!r}")
    if not history.records:
        raise ValueError("history is empty")
    out_dir = _prepare_dir(out_dir)
    epochs = history.series("epoch")
    paths = []
    for kind, label in (("loss", "Loss"), ("acc", "Accuracy")):
        fig = Figure(figsize=(6, 4), dpi=100)
        ax = fig.add_subplot()
        ax.plot(epochs, history.series(f"train_{kind}"), marker="o", label=f"Training {label.lower()}")
        ax.plot(epochs, history.series(f"val_{kind}"), marker="o", label=f"Validation {label.lower()}")
        ax.set_xlabel("Epoch")
        ax.set_ylabel(label)
        ax.set_title(f"Training and validation {label.lower()}")
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"{'loss' if kind == 'loss' else 'accuracy'}_curves.{fmt}"
        _save(fig, path, fmt)
        paths.append(path)
    return paths


def emit_confusion_heatmaps(report: EvaluationReport, out_dir, fmt: str = "png",
                            display_names=None) -> list:
    """One annotated heatmap per test subset."""
    if fmt not in FIGURE_FORMATS:
        raise RenderError(f"unsupported figure format {fmt!r}")
    out_dir = _prepare_dir(out_dir)
    names = list(display_names or report.class_names)
    paths = []
    for i, subset in enumerate(report.per_subset, start=1):
        counts = subset.confusion.counts
        k = len(names)
        fig = Figure(figsize=(1.2 * k + 2.5, 1.2 * k + 2), dpi=100)
        ax = fig.add_subplot()
        im = ax.imshow(counts, cmap="Blues", vmin=0)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        threshold = counts.max() / 2.0 if counts.size else 0
        for r in range(k):
            for c in range(k):
                ax.text(c, r, str(int(counts[r, c])), ha="center", va="center",
                        color="white" if counts[r, c] > threshold else "black")
        ax.set_xticks(range(k), names)
        ax.set_yticks(range(k), names)
        ax.set_xlabel("Predicted label")
        ax.set_ylabel("True label")
        ax.set_title(f"Test{i}")
        fig.tight_layout()
        path = out_dir / f"confusion_test{i}.{fmt}"
        _save(fig, path, fmt)
        paths.append(path)
    return paths


def write_report(report: EvaluationReport, out_dir, history=None, formats=("txt", "csv", "png"),
                 display_names=None, precision_digits: int = 2) -> ReportBundle:
    """Write report.txt / report.csv / report.json and figures/* as requested."""
    out_dir = _prepare_dir(out_dir)
    text, csv_text = render_table(report, precision_digits)
    bundle = ReportBundle(text=text, csv=csv_text, metadata=dict(report.metadata))
    try:
        if "txt" in formats:
            (out_dir / "report.txt").write_text(text)
            bundle.files.append(out_dir / "report.txt")
        if "csv" in formats:
            (out_dir / "report.csv").write_text(csv_text)
            bundle.files.append(out_dir / "report.csv")
        if "json" in formats:
            report.save(out_dir / "report.json")
            bundle.files.append(out_dir / "report.json")
    except OSError as exc:
        raise RenderError(f"cannot write report files in {out_dir}: {exc}") from exc
    for fmt in FIGURE_FORMATS:
        if fmt in formats:
            fig_dir = out_dir / "figures"
            bundle.figures += emit_confusion_heatmaps(report, fig_dir, fmt, display_names)
            if history is not None and history.records:
                bundle.figures += emit_curves(history, fig_dir, fmt)
    bundle.files += bundle.figures
    return bundle

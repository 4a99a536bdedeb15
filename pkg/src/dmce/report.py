"""Results CSV schema and NMSE-versus-SNR SVG charts."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

COLUMNS = ("method", "snr_db", "alpha", "bits", "nmse_db", "latency_ms", "n")


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class ResultRow:
    method: str
    snr_db: float
    alpha: float
    bits: int
    nmse_db: float
    latency_ms: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not math.isfinite(self.nmse_db):
            raise ValueError("nmse_db must be finite")

    def sort_key(self):
        return (self.method, self.snr_db, self.alpha, self.bits)


def _rounded(r: ResultRow) -> tuple:
    # 6 decimals; "+ 0.0" folds -0.0 into 0.0 so equal values print and sort alike
    return tuple(round(v, 6) + 0.0 if isinstance(v, float) else v for v in astuple(r))


def format_csv(rows) -> str:
    """CSV text with floats rounded to 6 decimals, sorted by (method, snr_db, alpha, bits)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for rec in sorted(map(_rounded, rows), key=lambda rec: rec[:4]):
        w.writerow([repr(v) if isinstance(v, float) else str(v) for v in rec])
    return buf.getvalue()


def write_csv(path, rows) -> None:
    try:
        Path(path).write_text(format_csv(rows))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def parse_csv(text: str, source: str = "<csv>") -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ReportError(f"{source}:1: empty file") from None
    if tuple(header) != COLUMNS:
        raise ReportError(f"{source}:1: header must be {','.join(COLUMNS)}")
    rows = []
    for record in reader:
        lineno = reader.line_num
        if not record:
            continue
        if len(record) != len(COLUMNS):
            raise ReportError(f"{source}:{lineno}: expected {len(COLUMNS)} fields, got {len(record)}")
        try:
            rows.append(ResultRow(record[0], float(record[1]), float(record[2]), int(record[3]),
                                  float(record[4]), float(record[5]), int(record[6])))
        except ValueError as exc:
            raise ReportError(f"{source}:{lineno}: {exc}") from None
    return rows


def read_csv(path) -> list[ResultRow]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return parse_csv(text, str(path))


def _label(v: float) -> str:
    return f"{v:g}".replace(".", "p")


def render_svg(rows, alpha: float, bits: int) -> str:
    """One NMSE(dB)-vs-SNR chart with one line per method; byte-identical for identical rows."""
    methods = sorted({r.method for r in rows})
    if not methods:
        raise ReportError("no methods to plot")
    with plt.rc_context({"svg.hashsalt": "dmce", "svg.fonttype": "path", "path.simplify": False}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for m in methods:
            pts = sorted((r.snr_db, r.nmse_db) for r in rows if r.method == m)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=m, gid=f"series-{m}")
        ax.set_xlabel("SNR [dB]")
        ax.set_ylabel("NMSE [dB]")
        res = "full resolution" if bits == 0 else f"{bits}-bit"
        ax.set_title(f"alpha = {alpha:g}, {res}")
        ax.grid(True, alpha=0.3)
        ax.legend()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def plot_results(rows, out_dir) -> list[Path]:
    """Writes one SVG per ``(alpha, bits)`` group; nothing is written if any group fails."""
    rows = list(rows)
    if not rows:
        raise ReportError("results contain no methods")
    groups = sorted({(r.alpha, r.bits) for r in rows})
    rendered = []
    for alpha, bits in groups:
        subset = [r for r in rows if r.alpha == alpha and r.bits == bits]
        rendered.append((Path(out_dir) / f"nmse_alpha{_label(alpha)}_bits{bits}.svg",
                         render_svg(subset, alpha, bits)))
    for path, svg in rendered:
        try:
            path.write_text(svg)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return [p for p, _ in rendered]

"""Report rows, CSV/JSON emission, plot-data extraction, and figure rendering.

Reports are deterministic: floats are written with ``repr`` (shortest
round-trip form), rows keep their generation order, and the JSON mirror
carries exactly the CSV rows.  ``emit_plotdata`` reshapes a report into
one CSV per (experiment, statistic) series with columns
series, x, y, lo, hi, and by default renders a matplotlib figure next to
each series file.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from .errors import DataError, InvalidParameterError

__all__ = ["ReportRow", "write_report", "read_report", "emit_plotdata"]

CSV_COLUMNS = ["experiment", "model", "params", "statistic", "value",
               "ci_low", "ci_high", "replicas", "seed"]

# which parameter provides the x coordinate of each experiment's series
SWEEP_KEYS: Dict[str, str] = {
    "radial-vs-excursion": "steps",
    "gap-distortion": "steps",
    "covering-tail": "steps",
    "reroot-law": "duration",
    "geodesic-avoidance": "duration",
    "loop-radial": "scale",
    "loop-dx": "scale",
    "bessel-coupling": "step",
    "ball-containment": "window",
}


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass(frozen=True)
class ReportRow:
    """One statistic from one experiment run."""

    experiment: str
    model: str
    params: Dict[str, object]
    statistic: str
    value: float
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    replicas: int = 0
    seed: int = 0

    def __post_init__(self):
        if not (self.value == self.value and abs(self.value) != float("inf")):
            raise DataError(f"non-finite report value for {self.statistic}")
        if self.ci_low is not None and self.ci_high is not None and self.ci_low > self.ci_high:
            raise DataError("confidence interval bounds out of order")

    def params_str(self) -> str:
        return ";".join(f"{k}={_fmt(v)}" for k, v in sorted(self.params.items()))

    def to_record(self) -> Dict[str, str]:
        return {
            "experiment": self.experiment,
            "model": self.model,
            "params": self.params_str(),
            "statistic": self.statistic,
            "value": _fmt(float(self.value)),
            "ci_low": _fmt(None if self.ci_low is None else float(self.ci_low)),
            "ci_high": _fmt(None if self.ci_high is None else float(self.ci_high)),
            "replicas": str(self.replicas),
            "seed": str(self.seed),
        }


def write_report(rows: Sequence[ReportRow], outdir, name: str = "report") -> List[Path]:
    """Write report CSV plus a row-for-row JSON mirror; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"{name}.csv"
    json_path = outdir / f"{name}.json"
    records = [r.to_record() for r in rows]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(records)
    with open(json_path, "w") as fh:
        json.dump({"rows": records}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [csv_path, json_path]


def read_report(path) -> List[Dict[str, str]]:
    path = Path(path)
    if path.is_dir():
        path = path / "report.csv"
    if not path.exists():
        raise DataError(f"report not found: {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _parse_params(s: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for part in s.split(";"):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k] = v
    return out


def emit_plotdata(report_path, outdir, render: bool = True) -> List[Path]:
    """One CSV (and optionally one PNG) per (experiment, statistic) series.

    The x coordinate is the experiment's sweep parameter; experiments
    without one get sequential x.  An empty report yields a header-only
    CSV so downstream tooling always has a file to read.
    """
    records = read_report(report_path)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    series: Dict[tuple, List[dict]] = {}
    for rec in records:
        key = (rec["experiment"], rec["statistic"])
        series.setdefault(key, []).append(rec)

    written: List[Path] = []
    if not records:
        path = outdir / "plotdata.csv"
        with open(path, "w", newline="") as fh:
            fh.write("series,x,y,lo,hi\n")
        return [path]

    for (experiment, statistic), recs in series.items():
        name = f"{experiment}__{statistic}".replace("/", "-")
        sweep = SWEEP_KEYS.get(experiment)
        rows = []
        for i, rec in enumerate(recs):
            params = _parse_params(rec["params"])
            x = params.get(sweep, str(i)) if sweep else str(i)
            rows.append((f"{experiment}.{statistic}", x, rec["value"],
                         rec["ci_low"], rec["ci_high"]))
        path = outdir / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            fh.write("series,x,y,lo,hi\n")
            for row in rows:
                fh.write(",".join(row) + "\n")
        written.append(path)
        if render:
            written.append(_render_series(path, rows, outdir, name))
    return written


def _render_series(csv_path: Path, rows, outdir: Path, name: str) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [float(r[1]) for r in rows]
    ys = [float(r[2]) for r in rows]
    los = [float(r[3]) if r[3] else None for r in rows]
    his = [float(r[4]) if r[4] else None for r in rows]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    if all(l is not None for l in los) and all(h is not None for h in his):
        yerr = [[y - l for y, l in zip(ys, los)], [h - y for y, h in zip(ys, his)]]
        ax.errorbar(xs, ys, yerr=yerr, marker="o", capsize=3, lw=1.2)
    else:
        ax.plot(xs, ys, marker="o", lw=1.2)
    if len(xs) > 1 and min(xs) > 0 and max(xs) / max(min(xs), 1e-300) >= 8:
        ax.set_xscale("log", base=2)
    ax.set_xlabel(rows[0][0].split(".")[0])
    ax.set_ylabel(rows[0][0].split(".", 1)[1])
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    out = outdir / f"{name}.png"
    fig.savefig(out, dpi=120, metadata={"Software": "crtlab"})
    plt.close(fig)
    return out

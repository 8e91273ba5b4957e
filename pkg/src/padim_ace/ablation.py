"""Ablation tables over covariance type, isotropic aggregation or detector.

Every run goes through the public ``padim-ace eval --seeds`` command; table
cells are then rebuilt from the per-run ``report.json`` files it persists,
as ``mean±std`` AUROC in percent.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from . import cli
from .metrics import METRICS, aggregate_runs

AXES = {
    "cov_type": ("--cov", ("full", "diagonal", "isotropic")),
    "aggregation": ("--agg", ("mean-diagonal", "mean-full", "determinant", "trace")),
    "detector": ("--detector", ("ace", "mahalanobis")),
}

FAILED = "FAILED"


@dataclass
class AblationSpec:
    axis: str
    values: Sequence[str]
    data: str
    workdir: str
    out: str
    seeds: Sequence[int] = (0, 1, 2)
    base: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}; expected one of {sorted(AXES)}")
        allowed = AXES[self.axis][1]
        if not self.values:
            raise ValueError("ablation needs at least one axis value")
        bad = [v for v in self.values if v not in allowed]
        if bad:
            raise ValueError(f"invalid {self.axis} values {bad}; expected a subset of {allowed}")
        if not self.seeds:
            raise ValueError("ablation needs at least one seed")


@dataclass
class AblationResult:
    csv_path: Path
    text_path: Path
    cells: dict[str, dict[str, str]]
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def _flags(base: dict[str, Any]) -> list[str]:
    out = []
    for key, value in base.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                out.append(flag)
        else:
            out += [flag, str(value)]
    return out


def format_cell(mean: float, std: float) -> str:
    return "%.2f±%.2f" % (100.0 * mean, 100.0 * std)


def cells_from_reports(rundir: Path, seeds: Sequence[int]) -> dict[str, str]:
    """Table cells for one axis value from its persisted per-seed reports."""
    runs = []
    for seed in seeds:
        report = json.loads((rundir / f"seed_{seed}" / "report.json").read_text())
        runs.extend(report["runs"])
    agg = aggregate_runs(runs)
    return {m: format_cell(agg.mean[m], agg.std[m]) for m in METRICS if agg.mean[m] is not None}


def run_ablation(spec: AblationSpec) -> AblationResult:
    spec.validate()
    flag = AXES[spec.axis][0]
    workdir = Path(spec.workdir)
    cells: dict[str, dict[str, str]] = {}
    failures: list[str] = []
    seeds = ",".join(str(s) for s in spec.seeds)
    for value in spec.values:
        rundir = workdir / f"{spec.axis}={value}"
        argv = ["eval", "--data", spec.data, "--seeds", seeds, "--workdir", str(rundir),
                "--out", str(rundir / "report.json"), *_flags(spec.base), flag, value]
        rundir.mkdir(parents=True, exist_ok=True)
        if cli.main(argv) != 0:
            failures.append(value)
            cells[value] = {m: FAILED for m in METRICS}
            continue
        cells[value] = cells_from_reports(rundir, spec.seeds)

    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", *spec.values])
    for metric in METRICS:
        writer.writerow([metric] + [cells[v].get(metric, "") for v in spec.values])
    csv_path = out.with_suffix(".csv")
    csv_path.write_text(buf.getvalue(), encoding="utf-8")

    text_path = out.with_suffix(".txt")
    text_path.write_text(render_table(spec.axis, spec.values, cells), encoding="utf-8")
    return AblationResult(csv_path, text_path, cells, failures)


def render_table(axis: str, values: Sequence[str], cells: dict[str, dict[str, str]]) -> str:
    labels = {"image_auroc": "Image AUROC", "pixel_auroc": "Pixel AUROC"}
    rows = [[axis, *values]] + [[labels[m], *(cells[v].get(m, "") for v in values)] for m in METRICS]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def main(argv: Optional[Sequence[str]] = None) -> int:
    p = argparse.ArgumentParser(prog="padim-ace-ablation", description="run one ablation axis")
    p.add_argument("--axis", required=True, choices=sorted(AXES))
    p.add_argument("--values", help="comma-separated axis values (default: all)")
    p.add_argument("--data", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--out", required=True, help="table path stem; .csv and .txt are written")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--base", default="{}", help="JSON object of extra eval flags, e.g. '{\"cov\": \"isotropic\"}'")
    args = p.parse_args(argv)
    values = args.values.split(",") if args.values else list(AXES[args.axis][1])
    spec = AblationSpec(args.axis, values, args.data, args.workdir, args.out,
                        [int(s) for s in args.seeds.split(",")], json.loads(args.base))
    try:
        result = run_ablation(spec)
    except ValueError as exc:
        p.error(str(exc))
    sys.stdout.write(result.text_path.read_text(encoding="utf-8"))
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())

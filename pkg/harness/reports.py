"""
Audit reports: a JSON record per run, plus CSV tables and SVG bar charts of the
per-race acceptance rates of every method row.
"""
import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import matplotlib
import numpy as np
from matplotlib.figure import Figure

import config
from errors import ContractViolation
from file_helpers import atomic_write_bytes, atomic_write_text, read_json, write_json

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "source", "target", "race", "rate", "bias_score", "outcome_delta")
SVG_HASH_SALT = "rsub"


@dataclass
class AuditReport:
    name: str
    kind: str
    config: dict
    seeds: dict
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind in ("audit-prompts", "debias", "generalize") and not any(
                row["method"] == "Original" for row in self.rows):
            raise ContractViolation("an audit report needs its Original row", report=self.name)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, record):
        return cls(**record)


def method_row(method, record, source, target, panel_seed):
    """One comparison row: the metric record tagged with method, settings and panel seed."""
    row = {"method": method, "source": source, "target": target, "panel_seed": panel_seed}
    row.update(record)
    return row


def report_csv(report):
    """One row per (method, race) with its rate, then one summary row per method."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report.rows:
        for race in config.RACES:
            writer.writerow({"method": row["method"], "source": row["source"], "target": row["target"],
                             "race": race, "rate": row["rates"][race], "bias_score": "", "outcome_delta": ""})
    for row in report.rows:
        writer.writerow({"method": row["method"], "source": row["source"], "target": row["target"],
                         "race": "all", "rate": row["acceptance_rate"], "bias_score": row["bias_score"],
                         "outcome_delta": row["outcome_delta"]})
    return buffer.getvalue()


def report_svg(report):
    """Grouped bars: one group per method, one bar per race."""
    matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
    matplotlib.rcParams["svg.fonttype"] = "none"
    methods = [row["method"] for row in report.rows]
    x = np.arange(len(methods))
    width = 0.8 / len(config.RACES)
    fig = Figure(figsize=(max(6.0, 1.4 * len(methods)), 4.0))
    ax = fig.subplots()
    for i, race in enumerate(config.RACES):
        rates = [100.0 * row["rates"][race] for row in report.rows]
        ax.bar(x + (i - 1.5) * width, rates, width, label=race.capitalize(), gid=f"race-{race}")
    ax.set_xticks(x)
    ax.set_xticklabels(methods, rotation=20, ha="right")
    ax.set_xlabel("Method")
    ax.set_ylabel("Acceptance rate (%)")
    ax.set_ylim(0, 100)
    ax.set_title(report.name)
    ax.legend(loc="upper right", fontsize="small")
    panel_seed = report.rows[0]["panel_seed"] if report.rows else None
    fig.text(0.01, 0.01, f"seed {report.seeds.get('master')} | panel seed {panel_seed}", fontsize=7)
    fig.tight_layout()
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def emit_report(report, layout, formats=("json", "csv", "svg")):
    """
    Writes the report under the layout's reports/ directory.

    :return: {format: path} of the files written.
    """
    written = {}
    if "json" in formats:
        written["json"] = write_json(layout.report(report.name, "json"), report.to_dict())
    if report.rows:
        if "csv" in formats:
            written["csv"] = atomic_write_text(layout.report(report.name, "csv"), report_csv(report))
        if "svg" in formats:
            written["svg"] = atomic_write_bytes(layout.report(report.name, "svg"), report_svg(report))
    for fmt, path in written.items():
        logger.info(f"📂 Report {report.name} ({fmt}) written to {path}")
    return written


def load_report(path):
    return AuditReport.from_dict(read_json(path))

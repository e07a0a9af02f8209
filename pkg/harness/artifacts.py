import csv
import io
import logging
from pathlib import Path

from errors import DependencyError
from file_helpers import read_bytes, require_file

logger = logging.getLogger(__name__)


class ArtifactLayout:
    """Where every stage reads and writes under one output directory."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)

    @property
    def log_dir(self):
        return self.root / "logs"

    def pairs(self, setting):
        return self.root / "data" / f"pairs_{setting}.jsonl"

    def panel(self, setting):
        return self.root / "data" / f"panel_{setting}.jsonl"

    def model(self, family):
        return self.root / "models" / f"ref_{family}.rsub"

    def teacher(self, family):
        return self.root / "models" / f"teacher_{family}.json"

    def subspace(self, setting, tap):
        layer, position = tap
        return self.root / "subspaces" / f"{setting}_L{layer}_P{position}.rsub"

    def sweep_table(self, setting):
        return self.root / "sweeps" / f"{setting}.csv"

    def das_log(self, setting, tap=None):
        if tap is None:
            return self.log_dir / f"das_{setting}.jsonl"
        return self.log_dir / f"das_{setting}_L{tap[0]}_P{tap[1]}.jsonl"

    def report(self, name, fmt="json"):
        return self.root / "reports" / f"{name}.{fmt}"


def best_tap_from_table(path):
    """
    Best (layer, position) of a saved sweep table: highest dev IIA among ok cells,
    ties to the larger layer, then the later position.
    """
    text = read_bytes(require_file(path, "sweep table")).decode("utf-8")
    rows = [row for row in csv.DictReader(io.StringIO(text)) if row["status"] == "ok"]
    if not rows:
        raise DependencyError(f"sweep table {path} has no successful cell", path=str(path))
    best = max(rows, key=lambda r: (float(r["dev_iia"]), int(r["layer"]), int(r["position"])))
    logger.debug(f"📂 Best tap from {path}: ({best['layer']}, {best['position']})")
    return int(best["layer"]), int(best["position"])

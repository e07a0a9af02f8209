import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

import config
from errors import AuditError, ContractViolation
from alignment.das import TapCache, iia_from_cache, train_das
from file_helpers import atomic_write_text
from worker_pool import WorkerPool

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ("layer", "position", "dev_iia", "test_iia", "seed", "status")


@dataclass(frozen=True)
class SweepCell:
    layer: int
    position: int
    dev_iia: float
    test_iia: float
    seed: int
    status: str = "ok"
    subspace: object = None
    log: list = None

    def to_row(self):
        return {"layer": self.layer, "position": self.position, "dev_iia": self.dev_iia,
                "test_iia": self.test_iia, "seed": self.seed, "status": self.status}


@dataclass(frozen=True)
class SweepResult:
    cells: list
    layers: tuple
    positions: tuple

    def grid(self, split="dev_iia"):
        """layers × positions array of IIA; NaN for failed cells."""
        values = np.full((len(self.layers), len(self.positions)), np.nan)
        for cell in self.cells:
            if cell.status == "ok":
                values[self.layers.index(cell.layer), self.positions.index(cell.position)] = getattr(cell, split)
        return values

    @property
    def best(self):
        """Highest dev IIA; ties go to the larger layer, then the later position."""
        ok = [c for c in self.cells if c.status == "ok"]
        if not ok:
            return None
        return max(ok, key=lambda c: (c.dev_iia, c.layer, c.position))

    @property
    def best_tap(self):
        best = self.best
        return None if best is None else (best.layer, best.position)

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for cell in self.cells:
            writer.writerow(cell.to_row())
        return buffer.getvalue()

    def write_csv(self, path):
        atomic_write_text(path, self.to_csv())
        logger.info(f"📂 Sweep table written to {path}")


class SweepManager:
    """
    Trains one subspace per (layer, position) cell on a shared TapCache, in parallel
    worker threads. A cell that fails is recorded with its error class and the
    sweep continues.
    """

    def __init__(self, model, train_cache, dev_cache, test_cache, das_config, seed_for,
                 num_workers=config.SWEEP_WORKERS, status_callback=None):
        """
        :param seed_for: (layer, position) → seed for that cell's DAS run.
        """
        self.model = model
        self.train_cache = train_cache
        self.dev_cache = dev_cache
        self.test_cache = test_cache
        self.das_config = das_config
        self.seed_for = seed_for
        self.num_workers = num_workers
        self.status_callback = status_callback

    def _train_cell(self, tap, worker_id):
        layer, position = tap
        seed = self.seed_for(layer, position)
        try:
            subspace, log = train_das(self.model, self.train_cache, self.dev_cache, tap, self.das_config, seed)
            dev = log[-1]["dev_iia"]
            test = iia_from_cache(self.model, subspace.basis, self.test_cache, tap)
        except AuditError as e:
            logger.error(f"❌ Sweep cell {tap} failed on worker {worker_id}: {e}")
            return SweepCell(layer, position, float("nan"), float("nan"), seed, type(e).__name__)
        logger.debug(f"✅ Sweep cell {tap}: dev IIA {dev:.4f}, test IIA {test:.4f}")
        return SweepCell(layer, position, dev, test, seed, "ok", subspace, log)

    def run(self, layers=None, positions=None):
        layers = tuple(range(self.model.config.layers + 1)) if layers is None else tuple(layers)
        positions = tuple(range(self.model.config.context_length)) if positions is None else tuple(positions)
        cells = [(layer, position) for layer in layers for position in positions]
        if not cells:
            raise ContractViolation("sweep grid is empty")

        logger.info(f"🚀 Sweeping {len(cells)} taps on {self.num_workers} workers")
        with WorkerPool(self._train_cell, num_workers=min(self.num_workers, len(cells)),
                        status_callback=self.status_callback) as pool:
            for tap in cells:
                pool.add_task(tap)
            outcomes = pool.wait_for_completion()

        results = []
        for (ok, outcome), (layer, position) in zip(outcomes, cells):
            if ok:
                results.append(outcome)
            else:
                results.append(SweepCell(layer, position, float("nan"), float("nan"),
                                         self.seed_for(layer, position), type(outcome).__name__))
        sweep = SweepResult(results, layers, positions)
        best = sweep.best
        if best is not None:
            logger.info(f"✅ Best tap {sweep.best_tap}: dev IIA {best.dev_iia:.4f}")
        else:
            logger.warning("⚠️ Every sweep cell failed")
        return sweep


def location_sweep(model, splits, das_config, seed_for, layers=None, positions=None,
                   num_workers=config.SWEEP_WORKERS, status_callback=None):
    """
    One subspace per (layer, position) over a PairSplits; every cell shares the
    train/dev/test TapCaches.
    """
    caches = [TapCache.build(model, part) for part in (splits.train, splits.dev, splits.test)]
    manager = SweepManager(model, *caches, das_config, seed_for, num_workers=num_workers,
                           status_callback=status_callback)
    return manager.run(layers, positions)

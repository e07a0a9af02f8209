import logging

from errors import DatasetIntegrityError
from file_helpers import read_jsonl, write_jsonl
from tasks.CounterfactualSampler import CounterfactualPair

logger = logging.getLogger(__name__)


def dump_pairs_jsonl(path, pairs, seed, roster=None):
    write_jsonl(path, [pair.to_dict(roster=roster, seed=seed) for pair in pairs])
    logger.info(f"📂 {len(pairs)} pairs written to {path}")


def load_pairs_jsonl(path):
    try:
        pairs = [CounterfactualPair.from_dict(row) for row in read_jsonl(path)]
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetIntegrityError(f"malformed pair record in {path}: {e}", path=str(path))
    logger.debug(f"📂 {len(pairs)} pairs read from {path}")
    return pairs


def dump_panel_jsonl(path, panel, seed):
    write_jsonl(path, [row.to_dict(seed) for row in panel])
    logger.info(f"📂 Panel of {len(panel)} profiles written to {path}")


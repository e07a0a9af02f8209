"""
Decision-level fairness metrics over race-expanded panels.

A DecisionTable holds one row per profile and one column per race (roster order),
1 for Yes and 0 for No.
"""
import logging
from dataclasses import dataclass

import numpy as np

import config
from errors import ContractViolation

logger = logging.getLogger(__name__)

N_RACES = len(config.RACES)


@dataclass(frozen=True)
class DecisionTable:
    decisions: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.decisions)
        if table.ndim != 2 or table.shape[1] != N_RACES:
            raise ContractViolation(f"decision table must be n × {N_RACES}", shape=str(table.shape))
        if table.size and not np.isin(table, (0, 1)).all():
            raise ContractViolation("decisions must be 0 or 1")
        object.__setattr__(self, "decisions", table.astype(np.int8))

    @classmethod
    def from_decisions(cls, decisions, n_profiles=None):
        """Panel-ordered "Yes"/"No" (or 1/0) decisions, four per profile."""
        flat = np.array([d == "Yes" if isinstance(d, str) else d for d in decisions], dtype=np.int8)
        if n_profiles is None:
            n_profiles = len(flat) // N_RACES
        if len(flat) != n_profiles * N_RACES:
            raise ContractViolation("decision count is not four per profile",
                                    decisions=len(flat), n_profiles=n_profiles)
        return cls(flat.reshape(n_profiles, N_RACES))

    @property
    def n_profiles(self):
        return self.decisions.shape[0]

    def _require_rows(self):
        if self.n_profiles == 0:
            raise ContractViolation("decision table is empty")


def bias_score(table):
    """100 × mean over profiles of the population standard deviation of the four decisions; in [0, 50]."""
    table._require_rows()
    return float(100.0 * table.decisions.std(axis=1, ddof=0).mean())


def acceptance_by_race(table):
    table._require_rows()
    return tuple(float(x) for x in table.decisions.mean(axis=0))


def acceptance_rate(table):
    table._require_rows()
    return float(table.decisions.mean())


def outcome_delta(before, after):
    """Change in overall acceptance, in percentage points."""
    return 100.0 * (acceptance_rate(after) - acceptance_rate(before))


def outcome_delta_from_rates(before_rates, after_rates):
    """Outcome Δ from per-race rates in percent, for race-balanced panels."""
    return float(np.mean(after_rates) - np.mean(before_rates))


def most_least_favored(rates):
    """(most favored race, least favored race); ties resolve to the earlier race in roster order."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.shape != (N_RACES,):
        raise ContractViolation(f"expected {N_RACES} per-race rates", shape=str(rates.shape))
    return config.RACES[int(np.argmax(rates))], config.RACES[int(np.argmin(rates))]


def metric_record(table, baseline=None, p_matrix=None, seed=None, intervention=None):
    """
    JSON-ready metric record for one decision table.

    :param baseline: DecisionTable the Outcome Δ is measured against; None reports 0.
    """
    rates = acceptance_by_race(table)
    record = {
        "bias_score": bias_score(table),
        "outcome_delta": 0.0 if baseline is None else outcome_delta(baseline, table),
        "rates": dict(zip(config.RACES, rates)),
        "acceptance_rate": acceptance_rate(table),
        "p_matrix": p_matrix,
        "n": table.n_profiles,
        "seed": seed,
        "intervention": intervention,
    }
    most, least = most_least_favored(rates)
    record["most_favored"], record["least_favored"] = most, least
    record["gap_points"] = 100.0 * (max(rates) - min(rates))
    return record

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

import config
from errors import ContractViolation
from metrics.fairness import acceptance_by_race, bias_score, most_least_favored
from metrics.significance import pairwise_p_matrix
from seeds import derive_seed
from worker_pool import run_in_pool

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrialSet:
    rates: dict              # race → per-trial acceptance rates
    bias_scores: tuple
    seeds: tuple
    p_matrix: list
    ranking: tuple = ()      # races by mean acceptance, most favored first
    favored: dict = None     # most, least, gap_points and the Welch p between them

    @property
    def n_trials(self):
        return len(self.seeds)

    def mean_rates(self):
        return {race: float(np.mean(values)) for race, values in self.rates.items()}

    def to_dict(self):
        return {
            "rates": {race: list(values) for race, values in self.rates.items()},
            "mean_rates": self.mean_rates(),
            "bias_scores": list(self.bias_scores),
            "seeds": list(self.seeds),
            "p_matrix": self.p_matrix,
            "ranking": list(self.ranking),
            "favored": self.favored,
        }


class TrialTracker:
    """
    Accumulates per-trial, per-race acceptance rates over repeated panels.
    """

    def __init__(self):
        # {race: [rate per trial]}
        self.rates = defaultdict(list)
        self.bias_scores = []
        self.seeds = []

    def record_trial(self, table, seed=None):
        """
        Records one trial's decision table.

        :param table: DecisionTable of the trial's panel.
        :param seed: the seed its panel was drawn from.
        """
        for race, rate in zip(config.RACES, acceptance_by_race(table)):
            self.rates[race].append(rate)
        self.bias_scores.append(bias_score(table))
        self.seeds.append(seed)
        logger.debug(f"🧪 Recorded trial {len(self.seeds)}: seed={seed}, bias={self.bias_scores[-1]:.2f}")

    @property
    def n_trials(self):
        return len(self.seeds)

    def mean_rates(self):
        return {race: float(np.mean(self.rates[race])) for race in config.RACES}

    def rank_races(self):
        """Races sorted by mean acceptance, most favored first."""
        ranking = sorted(self.mean_rates().items(), key=lambda item: -item[1])
        logger.debug(f"Race ranking (most favored first): {ranking}")
        return ranking

    def p_matrix(self):
        if self.n_trials < 2:
            raise ContractViolation("significance needs at least two trials", trials=self.n_trials)
        return pairwise_p_matrix(self.rates)

    def favored_gap(self):
        """(most favored, least favored, gap in points, Welch p between them)."""
        means = self.mean_rates()
        most, least = most_least_favored([means[race] for race in config.RACES])
        matrix = self.p_matrix()
        p = matrix[config.RACES.index(most)][config.RACES.index(least)]
        return most, least, 100.0 * (means[most] - means[least]), p

    def trial_set(self):
        most, least, gap, p = self.favored_gap()
        return TrialSet({race: tuple(self.rates[race]) for race in config.RACES},
                        tuple(self.bias_scores), tuple(self.seeds), self.p_matrix(),
                        ranking=tuple(race for race, _ in self.rank_races()),
                        favored={"most": most, "least": least, "gap_points": gap, "p": p})

    def log_summary(self):
        for race, rate in self.mean_rates().items():
            logger.info(f"Race: {race} | Trials: {len(self.rates[race])} | Mean acceptance: {rate:.4f}")


def trial_aggregate(runner, n_trials=config.TRIALS, panel_size=config.TRIAL_PANEL_SIZE, seed=config.MASTER_SEED,
                    num_workers=config.TRIALS):
    """
    Runs n_trials independent panels concurrently and merges them in trial order.

    :param runner: (panel_size, seed) → DecisionTable.
    :return: TrialSet with per-trial rates and the pairwise p-matrix.
    """
    if n_trials < 2:
        raise ContractViolation("trial aggregation needs at least two trials", trials=n_trials)
    trial_seeds = [derive_seed(seed, f"trial-{i}") for i in range(n_trials)]

    def run_trial(trial_seed, worker_id):
        return runner(panel_size, trial_seed)

    tables = run_in_pool(run_trial, trial_seeds, num_workers=min(num_workers, n_trials))
    tracker = TrialTracker()
    for trial_seed, table in zip(trial_seeds, tables):
        tracker.record_trial(table, trial_seed)
    tracker.log_summary()
    return tracker.trial_set()

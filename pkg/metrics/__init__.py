from metrics.fairness import (
    DecisionTable,
    acceptance_by_race,
    acceptance_rate,
    bias_score,
    metric_record,
    most_least_favored,
    outcome_delta,
    outcome_delta_from_rates,
)
from metrics.significance import pairwise_p_matrix, welch_t_test
from metrics.TrialTracker import TrialSet, TrialTracker, trial_aggregate

"""
Race averaging plugin: the subspace component of every activation is replaced by
the mean subspace component of its averaging group (whole batch, or each block of
four race variants).
"""
from interventions.subspace import batch_race_average


def race_average(reps, subspace, sources=None, scope="batch"):
    return batch_race_average(reps, subspace, scope=scope or "batch")


def register():
    return {
        "name": "RaceAverage",
        "transform": race_average,
        "needs_subspace": True,
        "batch_statistic": True,
    }

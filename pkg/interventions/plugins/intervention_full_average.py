"""
Full averaging baseline: every activation at the tap becomes the batch mean.
"""
from interventions.subspace import full_average


def average_everything(reps, subspace=None, sources=None, scope=None):
    return full_average(reps)


def register():
    return {
        "name": "FullAverage",
        "transform": average_everything,
        "needs_subspace": False,
        "batch_statistic": True,
    }

"""
Race projection plugin: zero the subspace component of the activation.
"""
from interventions.subspace import complement_project


def race_project(reps, subspace, sources=None, scope=None):
    return complement_project(subspace, reps)


def register():
    return {
        "name": "RaceProject",
        "transform": race_project,
        "needs_subspace": True,
        "batch_statistic": False,
    }

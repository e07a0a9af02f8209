"""
Random projection baseline: race projection through a random subspace of the
learned subspace's dimension.
"""
from interventions.subspace import complement_project


def random_project(reps, subspace, sources=None, scope=None):
    return complement_project(subspace, reps)


def register():
    return {
        "name": "RandomProject",
        "transform": random_project,
        "needs_subspace": True,
        "batch_statistic": False,
        "provenance": "random",
    }

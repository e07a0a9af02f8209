"""
Distributed interchange intervention plugin.

Each target activation keeps its complement component and takes the source's
subspace component.

✅ Drop this file into interventions/plugins; InterventionRegistry auto-loads it.
"""
from errors import ContractViolation
from interventions.subspace import dii_replace


def interchange(reps, subspace, sources=None, scope=None):
    if sources is None:
        raise ContractViolation("DII needs source activations aligned with the targets")
    return dii_replace(reps, sources, subspace)


def register():
    return {
        "name": "DII",
        "transform": interchange,
        "needs_subspace": True,
        "batch_statistic": False,
        "needs_sources": True,
    }

from interventions.subspace import (
    Subspace,
    batch_race_average,
    complement_project,
    dii_replace,
    empty_subspace,
    full_average,
    full_subspace,
    project,
    random_subspace,
)
from interventions.subspace_io import load_subspace, save_subspace
from interventions.InterventionRegistry import InterventionRegistry, default_registry
from interventions.runner import InterventionResult, InterventionSpec, run_with_intervention, tap_activations

import logging

import numpy as np

from errors import ContractViolation, DatasetIntegrityError
from alignment.das import TapCache, iia_from_cache
from interventions.subspace import full_subspace, random_subspace
from refmodel.transformer import decide_prompts
from tasks.task_spec import make_task_spec

logger = logging.getLogger(__name__)


def interchange_labels(model, pairs):
    """decide() on every target prompt carrying its source's identity token."""
    return decide_prompts(model, [pair.swapped_prompt() for pair in pairs])


def interchange_oracle(model, pair):
    """
    :raises DatasetIntegrityError: the recomputed label disagrees with the stored counterfactual label.
    """
    label = interchange_labels(model, [pair])[0]
    if label != pair.counterfactual_label:
        raise DatasetIntegrityError("stored counterfactual label disagrees with the model",
                                    stored=pair.counterfactual_label, recomputed=label,
                                    institution=pair.institution)
    return label


def verify_pairs(model, pairs):
    """Batch form of interchange_oracle over a whole pair set."""
    labels = interchange_labels(model, pairs)
    bad = [i for i, (label, pair) in enumerate(zip(labels, pairs)) if label != pair.counterfactual_label]
    if bad:
        raise DatasetIntegrityError(f"{len(bad)} stored counterfactual labels disagree with the model",
                                    first_index=bad[0], mismatches=len(bad))
    return labels


def _cache_for(model, pairs, cache):
    if cache is not None:
        return cache
    if not pairs:
        raise ContractViolation("IIA needs at least one pair")
    return TapCache.build(model, list(pairs))


def iia_eval(model, subspace, pairs, cache=None):
    """Fraction of pairs whose DII-intervened decision matches the counterfactual label."""
    cache = _cache_for(model, pairs, cache)
    return iia_from_cache(model, subspace.basis, cache, subspace.tap)


def trivial_iia(pairs=None, cache=None):
    """Accuracy of predicting the base label as the counterfactual label."""
    if cache is not None:
        return float(np.mean(cache.base == cache.counterfactual))
    if not pairs:
        raise ContractViolation("IIA needs at least one pair")
    return float(np.mean([p.base_label == p.counterfactual_label for p in pairs]))


def baseline_iias(model, pairs, tap, k, rng, cache=None):
    """IIA of the base-label predictor, the full intervention and a random k-subspace at one tap."""
    cache = _cache_for(model, pairs, cache)
    d = model.config.width
    return {
        "trivial": trivial_iia(cache=cache),
        "full": iia_eval(model, full_subspace(d, tap), pairs, cache),
        "random": iia_eval(model, random_subspace(d, k, rng, tap), pairs, cache),
    }


def iia_by_institution(model, subspace, pairs, rng, cache=None):
    """{institution name: {"learned", "full", "random", "pairs"}} over the institutions present."""
    cache = _cache_for(model, pairs, cache)
    family = pairs[0].source_profile.family
    names = make_task_spec(family).institutions
    d = model.config.width
    full = full_subspace(d, subspace.tap)
    random = random_subspace(d, max(subspace.k, 1), rng, subspace.tap)
    breakdown = {}
    for institution in np.unique(cache.institutions):
        part = cache.subset(np.flatnonzero(cache.institutions == institution))
        breakdown[names[int(institution)]] = {
            "learned": iia_from_cache(model, subspace.basis, part, subspace.tap),
            "full": iia_from_cache(model, full.basis, part, full.tap),
            "random": iia_from_cache(model, random.basis, part, random.tap),
            "pairs": len(part),
        }
    return breakdown


def layer_averaged_iia(model, subspaces, pairs, cache=None):
    """Mean IIA over several taps, one subspace per tap (e.g. adjacent layers)."""
    if not subspaces:
        raise ContractViolation("need at least one subspace to average")
    cache = _cache_for(model, pairs, cache)
    scores = [iia_from_cache(model, s.basis, cache, s.tap) for s in subspaces]
    return float(np.mean(scores))

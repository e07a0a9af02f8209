import logging
from dataclasses import dataclass

import numpy as np

import config
from errors import ContractViolation
from tasks.encoding import append_fairness_suffix, render_prompt
from tasks.task_spec import race_variants, sample_profile
from worker_pool import run_in_pool

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PanelRow:
    """One sampled profile expanded to its four race variants (roster race order)."""
    index: int
    profiles: tuple
    prompts: tuple

    def to_dict(self, seed):
        return {
            "index": self.index,
            "seed": seed,
            "profiles": [p.to_dict() for p in self.profiles],
            "prompts": [p.to_dict() for p in self.prompts],
        }


def _shard_bounds(n_profiles, shards):
    edges = np.linspace(0, n_profiles, shards + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def make_eval_panel(spec, roster, n_profiles, template, seed, suffix="none",
                    shards=config.PANEL_SHARDS, num_workers=config.PANEL_SHARDS):
    """
    n_profiles independent profiles, each expanded by race_variants and rendered.

    Shard s (a contiguous block of profile indices) draws from seed ^ s, so the panel
    depends on (seed, shards) only, never on how many threads ran it.
    """
    if n_profiles < 1:
        raise ContractViolation("panel needs at least one profile", n_profiles=n_profiles)
    explicit = template == "explicit"
    shards = max(1, min(shards, n_profiles))

    def build_shard(bounds, worker_id):
        shard_index, (start, stop) = bounds
        rng = np.random.default_rng(seed ^ shard_index)
        rows = []
        for index in range(start, stop):
            profile = sample_profile(spec, rng, explicit=explicit)
            variants = tuple(race_variants(profile, roster, rng))
            prompts = tuple(append_fairness_suffix(render_prompt(v, template), suffix) for v in variants)
            rows.append(PanelRow(index, variants, prompts))
        return rows

    shard_rows = run_in_pool(build_shard, enumerate(_shard_bounds(n_profiles, shards)), num_workers)
    panel = [row for rows in shard_rows for row in rows]
    logger.debug(f"🧪 Panel built: {len(panel)} profiles, template={template}, suffix={suffix}, seed={seed}")
    return panel


def panel_prompts(panel):
    """Flatten a panel to its prompts, 4 per profile in roster race order."""
    return [prompt for row in panel for prompt in row.prompts]


@dataclass(frozen=True)
class TrainingSet:
    prompts: tuple
    labels: np.ndarray      # 1 = Yes, 0 = No
    profiles: tuple

    def __len__(self):
        return len(self.prompts)


def _template_sampler(template):
    if isinstance(template, str):
        return lambda rng: template
    names = tuple(template)
    weights = np.array([template[name] for name in names], dtype=np.float64)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ContractViolation("template mix weights must be non-negative with a positive sum",
                                mix=dict(template))
    weights = weights / weights.sum()
    return lambda rng: names[int(rng.choice(len(names), p=weights))]


def make_training_set(spec, rule, n, template, rng):
    """
    n teacher-labelled prompts over uniform profiles (hence uniform race).

    :param template: a template id, or a {template: weight} mix drawn per example.
    """
    if n < 1:
        raise ContractViolation("training set needs at least one example", n=n)
    pick = _template_sampler(template)
    prompts, labels, profiles = [], [], []
    for _ in range(n):
        chosen = pick(rng)
        profile = sample_profile(spec, rng, explicit=chosen == "explicit")
        prompts.append(render_prompt(profile, chosen))
        labels.append(1 if rule.label(profile) == "Yes" else 0)
        profiles.append(profile)
    return TrainingSet(tuple(prompts), np.array(labels, dtype=np.int64), tuple(profiles))

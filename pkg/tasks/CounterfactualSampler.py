import logging
from dataclasses import dataclass

import config
from errors import ContractViolation, SaturationError
from tasks.encoding import EncodedPrompt, render_prompt
from tasks.task_spec import Profile, sample_profile

logger = logging.getLogger(__name__)

LABELS = ("Yes", "No")
BEHAVIOR_CLASSES = ("Yes->Yes", "Yes->No", "No->Yes", "No->No")
CANDIDATE_BATCH = 64


def behavior_class(base_label, counterfactual_label):
    return f"{base_label}->{counterfactual_label}"


@dataclass(frozen=True)
class CounterfactualPair:
    """
    (source, target) prompts with the base label (target as-is) and the counterfactual
    label (target qualifications with the source identity).
    """
    source: EncodedPrompt
    target: EncodedPrompt
    base_label: str
    counterfactual_label: str
    behavior_class: str
    institution: int
    source_profile: Profile
    target_profile: Profile

    def __post_init__(self):
        if behavior_class(self.base_label, self.counterfactual_label) != self.behavior_class:
            raise ContractViolation("behavior class disagrees with the pair's labels",
                                    behavior_class=self.behavior_class)

    def swapped_prompt(self):
        """The target prompt carrying the source's identity token."""
        return self.target.with_identity_token(self.source.tokens[self.source.name_position])

    def to_dict(self, roster=None, seed=None):
        record = {
            "source": self.source.to_dict(),
            "target": self.target.to_dict(),
            "base_label": self.base_label,
            "counterfactual_label": self.counterfactual_label,
            "behavior_class": self.behavior_class,
            "institution": self.institution,
            "source_profile": self.source_profile.to_dict(),
            "target_profile": self.target_profile.to_dict(),
        }
        if roster is not None:
            record["source_name"] = roster.name_of(self.source_profile.name_id)
            record["target_name"] = roster.name_of(self.target_profile.name_id)
        if seed is not None:
            record["seed"] = seed
        return record

    @classmethod
    def from_dict(cls, record):
        return cls(
            source=EncodedPrompt.from_dict(record["source"]),
            target=EncodedPrompt.from_dict(record["target"]),
            base_label=record["base_label"],
            counterfactual_label=record["counterfactual_label"],
            behavior_class=record["behavior_class"],
            institution=int(record["institution"]),
            source_profile=Profile.from_dict(record["source_profile"]),
            target_profile=Profile.from_dict(record["target_profile"]),
        )


class CounterfactualSampler:
    """
    Rejection-samples (source, target) pairs until every institution holds exactly
    n pairs of each behavior class.

    The oracle labels a list of prompts with "Yes"/"No" (the reference model's decide).
    """

    def __init__(self, spec, roster, oracle, n_per_class, template="free",
                 attempt_budget=config.PAIR_ATTEMPT_BUDGET):
        if n_per_class < 1:
            raise ContractViolation("need at least one pair per behavior class", n=n_per_class)
        self.spec = spec
        self.roster = roster
        self.oracle = oracle
        self.n_per_class = n_per_class
        self.template = template
        self.attempt_budget = attempt_budget
        self.attempt_counts = {}

    def _label(self, prompts):
        labels = list(self.oracle(prompts))
        if len(labels) != len(prompts) or any(label not in LABELS for label in labels):
            raise ContractViolation("oracle must return one Yes/No label per prompt")
        return labels

    def sample_institution(self, institution, rng):
        explicit = self.template == "explicit"
        counts = {name: 0 for name in BEHAVIOR_CLASSES}
        accepted = []
        attempts = 0
        # Each class gets its own attempt budget; the institution shares the total.
        limit = self.attempt_budget * len(BEHAVIOR_CLASSES)

        while any(count < self.n_per_class for count in counts.values()):
            if attempts >= limit:
                unfilled = [name for name, count in counts.items() if count < self.n_per_class]
                self.attempt_counts[self.spec.institutions[institution]] = attempts
                logger.error(f"❌ Saturated: {self.spec.institutions[institution]} cannot fill {unfilled}")
                raise SaturationError(
                    f"behavior class {unfilled[0]} unfillable for {self.spec.institutions[institution]}",
                    institution=self.spec.institutions[institution], behavior_class=unfilled[0],
                    attempts=attempts, counts=str(counts))

            batch = min(CANDIDATE_BATCH, limit - attempts)
            sources, targets = [], []
            for _ in range(batch):
                sources.append(sample_profile(self.spec, rng, explicit=explicit, institution=institution))
                targets.append(sample_profile(self.spec, rng, explicit=explicit, institution=institution))
            target_prompts = [render_prompt(t, self.template) for t in targets]
            swapped_prompts = [render_prompt(t.with_identity_of(s), self.template)
                               for s, t in zip(sources, targets)]
            base_labels = self._label(target_prompts)
            counterfactual_labels = self._label(swapped_prompts)

            for i in range(batch):
                attempts += 1
                name = behavior_class(base_labels[i], counterfactual_labels[i])
                if counts[name] >= self.n_per_class:
                    continue
                counts[name] += 1
                accepted.append(CounterfactualPair(
                    source=render_prompt(sources[i], self.template),
                    target=target_prompts[i],
                    base_label=base_labels[i],
                    counterfactual_label=counterfactual_labels[i],
                    behavior_class=name,
                    institution=institution,
                    source_profile=sources[i],
                    target_profile=targets[i],
                ))
                if all(count >= self.n_per_class for count in counts.values()):
                    break

        self.attempt_counts[self.spec.institutions[institution]] = attempts
        return accepted

    def sample(self, rng):
        pairs = []
        for institution in range(self.spec.n_institutions):
            pairs.extend(self.sample_institution(institution, rng))
        logger.info(f"✅ {len(pairs)} counterfactual pairs sampled "
                    f"({self.n_per_class} per class × {self.spec.n_institutions} institutions)")
        return pairs


def make_counterfactual_pairs(spec, roster, oracle, n_per_class_per_institution, rng, template="free",
                              attempt_budget=config.PAIR_ATTEMPT_BUDGET):
    sampler = CounterfactualSampler(spec, roster, oracle, n_per_class_per_institution,
                                    template=template, attempt_budget=attempt_budget)
    return sampler.sample(rng)


@dataclass(frozen=True)
class PairSplits:
    train: list
    dev: list
    test: list
    requested: dict
    obtained: dict


def split_pairs(pairs, train=config.SPLIT_TRAIN, dev=config.SPLIT_DEV, test=config.SPLIT_TEST, rng=None):
    """
    Shuffle (when rng is given) and cut pairs into train/dev/test.

    When fewer pairs exist than requested, dev and test shrink proportionally and train
    takes the remainder; requested vs obtained sizes are both recorded.
    """
    pairs = list(pairs)
    if rng is not None:
        pairs = [pairs[i] for i in rng.permutation(len(pairs))]
    requested = {"train": train, "dev": dev, "test": test}
    wanted = train + dev + test
    if len(pairs) >= wanted:
        sizes = dict(requested)
    else:
        scale = len(pairs) / wanted
        n_dev, n_test = int(dev * scale), int(test * scale)
        sizes = {"train": len(pairs) - n_dev - n_test, "dev": n_dev, "test": n_test}
        logger.warning(f"⚠️ Only {len(pairs)} pairs for a {wanted}-pair split; obtained {sizes}")
    a = sizes["train"]
    b = a + sizes["dev"]
    c = b + sizes["test"]
    return PairSplits(pairs[:a], pairs[a:b], pairs[b:c], requested, sizes)

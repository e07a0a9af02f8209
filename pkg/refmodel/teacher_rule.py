"""
The biased decision rule the reference model is trained to imitate.

Yes iff Σ w_j·z_j + β_race > τ_institution, z_j the min-max normalized qualifications as
the prompt shows them (GPA on its 0.1 grid).
"""
import logging
from dataclasses import dataclass, replace

import numpy as np

import config
from errors import ContractViolation
from tasks.task_spec import make_task_spec

logger = logging.getLogger(__name__)

DEFAULT_WEIGHTS = {"admissions": config.ADMISSIONS_WEIGHTS, "hiring": config.HIRING_WEIGHTS}
DEFAULT_OFFSETS = {"admissions": config.ADMISSIONS_OFFSETS, "hiring": config.HIRING_OFFSETS}
TAU_BOUNDS = (0.3, 0.7)


@dataclass(frozen=True)
class TeacherRule:
    family: str
    weights: tuple
    offsets: dict        # race → β
    thresholds: tuple    # institution index → τ

    def __post_init__(self):
        if self.family not in DEFAULT_WEIGHTS:
            raise ContractViolation(f"unknown task family '{self.family}'", family=self.family)
        if len(self.weights) != 3 or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ContractViolation("teacher weights must be three values summing to 1",
                                    weights=str(self.weights))
        if set(self.offsets) != set(config.RACES):
            raise ContractViolation("teacher offsets must name every race", races=",".join(self.offsets))
        for race, beta in self.offsets.items():
            if abs(beta) > config.OFFSET_BOUND + 1e-12:
                raise ContractViolation(f"offset for {race} outside ±{config.OFFSET_BOUND}", race=race, beta=beta)
        for tau in self.thresholds:
            if not TAU_BOUNDS[0] <= tau <= TAU_BOUNDS[1]:
                raise ContractViolation(f"threshold {tau} outside {TAU_BOUNDS}", tau=tau)
        object.__setattr__(self, "offsets", {race: float(self.offsets[race]) for race in config.RACES})
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))

    @property
    def spec(self):
        return make_task_spec(self.family)

    def score(self, profile, spec=None):
        if profile.family != self.family:
            raise ContractViolation("profile family does not match the rule",
                                    profile_family=profile.family, rule_family=self.family)
        spec = spec or self.spec
        z = spec.normalize(spec.observed(profile.qualifications))
        return sum(w * zj for w, zj in zip(self.weights, z)) + self.offsets[profile.race]

    def label(self, profile, spec=None):
        return "Yes" if self.score(profile, spec) > self.thresholds[profile.institution] else "No"

    def with_offsets(self, offsets):
        return replace(self, offsets=dict(offsets))

    def scaled(self, factor):
        return self.with_offsets({race: beta * factor for race, beta in self.offsets.items()})

    @classmethod
    def default(cls, family, rng, offsets=None):
        """Default weights and offsets; one τ per institution drawn uniformly from the threshold range."""
        spec = make_task_spec(family)
        low, high = config.THRESHOLD_RANGE
        thresholds = tuple(float(t) for t in rng.uniform(low, high, size=spec.n_institutions))
        return cls(family, DEFAULT_WEIGHTS[family], dict(offsets or DEFAULT_OFFSETS[family]), thresholds)

    @classmethod
    def null(cls, family, rng):
        return cls.default(family, rng, offsets={race: 0.0 for race in config.RACES})

    def to_dict(self):
        return {
            "family": self.family,
            "weights": list(self.weights),
            "offsets": dict(self.offsets),
            "thresholds": list(self.thresholds),
        }

    @classmethod
    def from_dict(cls, record):
        return cls(record["family"], tuple(record["weights"]), dict(record["offsets"]),
                   tuple(record["thresholds"]))


def teacher_label(profile, rule):
    return rule.label(profile)


# ---------- MONTE-CARLO OFFSET CALIBRATION ----------

def _uniform_scores(rule, rng, n):
    """Race-free scores minus τ for n uniform (institution, qualifications) draws: n-vector."""
    spec = rule.spec
    columns = []
    for domain in spec.domains:
        if domain.continuous:
            raw = rng.uniform(domain.low, domain.high, size=n)
            buckets = np.minimum(np.floor((raw - domain.low) * 10.0 + 0.5), config.N_GPA_BUCKETS - 1)
            columns.append(domain.low + 0.1 * buckets)
        else:
            columns.append(rng.integers(int(domain.low), int(domain.high) + 1, size=n).astype(np.float64))
    institutions = rng.integers(0, spec.n_institutions, size=n)
    base = sum(w * domain.normalize(col) for w, domain, col in zip(rule.weights, spec.domains, columns))
    return base - np.asarray(rule.thresholds)[institutions]


def acceptance_rates_from_margins(margins, offsets):
    return {race: float(np.mean(margins + offsets[race] > 0.0)) for race in config.RACES}


def monte_carlo_gap(rule, rng, n=config.CALIBRATION_SAMPLES):
    """
    Per-race acceptance rates of the rule on n uniform profiles, every profile scored under all races.

    :return: {race: rate in [0, 1]}
    """
    if n < 1:
        raise ContractViolation("Monte-Carlo oracle needs at least one sample", n=n)
    return acceptance_rates_from_margins(_uniform_scores(rule, rng, n), rule.offsets)


def acceptance_gap(rates):
    """Most- minus least-favored acceptance rate, in percentage points."""
    return 100.0 * (max(rates.values()) - min(rates.values()))


def calibrate_offsets(rule, rng, target_gap=config.CALIBRATION_TARGET_GAP, n=config.CALIBRATION_SAMPLES,
                      tolerance=1.0, max_iterations=60):
    """
    Rescale the offset pattern by bisection until the simulated gap is within tolerance of target_gap.

    One sample set is reused for every candidate scale, so the gap is monotone in the scale.

    :raises ContractViolation: the target is unreachable inside the offset bound.
    """
    peak = max(abs(beta) for beta in rule.offsets.values())
    if peak == 0.0:
        raise ContractViolation("cannot calibrate an all-zero offset pattern")
    margins = _uniform_scores(rule, rng, n)

    def gap_at(factor):
        return acceptance_gap(acceptance_rates_from_margins(
            margins, {race: beta * factor for race, beta in rule.offsets.items()}))

    low, high = 0.0, config.OFFSET_BOUND / peak
    if gap_at(high) < target_gap - tolerance:
        raise ContractViolation("target gap unreachable within the offset bound",
                                target_gap=target_gap, max_gap=gap_at(high))
    factor = 1.0
    for _ in range(max_iterations):
        gap = gap_at(factor)
        if abs(gap - target_gap) <= tolerance:
            break
        if gap < target_gap:
            low = factor
        else:
            high = factor
        factor = 0.5 * (low + high)
    calibrated = rule.scaled(factor)
    logger.info(f"✅ Offsets calibrated: scale {factor:.4f}, gap {gap_at(factor):.2f} points "
                f"(target {target_gap})")
    return calibrated

import logging
from dataclasses import dataclass, replace

import config
from errors import ContractViolation
from tasks.encoding import gpa_bucket, gpa_of_bucket
from tasks.roster import load_institutions, race_of_name

logger = logging.getLogger(__name__)

DEGREE_LEVELS = ("High school", "College", "Master's", "Ph.D.")


@dataclass(frozen=True)
class Domain:
    name: str
    low: float
    high: float
    continuous: bool = False

    def contains(self, value):
        if not self.continuous and value != int(value):
            return False
        return self.low <= value <= self.high

    def normalize(self, value):
        return (value - self.low) / (self.high - self.low)

    @property
    def size(self):
        return int(self.high - self.low) + 1


ADMISSIONS_DOMAINS = (
    Domain("gpa", 1.0, 4.0, continuous=True),
    Domain("ecs", 0, 8),
    Domain("letters", 0, 3),
)
HIRING_DOMAINS = (
    Domain("experience", 0, 20),
    Domain("degree", 0, 3),
    Domain("referrals", 0, 3),
)


@dataclass(frozen=True)
class TaskSpec:
    family: str
    institutions: tuple
    domains: tuple

    @property
    def n_institutions(self):
        return len(self.institutions)

    def normalize(self, qualifications):
        """Min-max normalize each qualification to [0, 1]."""
        return tuple(domain.normalize(value) for domain, value in zip(self.domains, qualifications))

    def observed(self, qualifications):
        """Qualifications as a prompt encodes them: GPA snapped to its 0.1 bucket."""
        return tuple(gpa_of_bucket(gpa_bucket(value)) if domain.continuous else value
                     for domain, value in zip(self.domains, qualifications))


def make_task_spec(family):
    if family == "admissions":
        return TaskSpec("admissions", load_institutions("admissions"), ADMISSIONS_DOMAINS)
    if family == "hiring":
        return TaskSpec("hiring", load_institutions("hiring"), HIRING_DOMAINS)
    raise ContractViolation(f"unknown task family '{family}'", family=family)


@dataclass(frozen=True)
class Profile:
    """
    One applicant. In implicit mode the name id drives race; in explicit mode the race
    tag does and the name id is kept for provenance only.
    """
    family: str
    institution: int
    qualifications: tuple
    name_id: int
    race: str
    explicit: bool = False

    def __post_init__(self):
        if self.race not in config.RACES:
            raise ContractViolation(f"unknown race '{self.race}'", race=self.race)
        if not self.explicit and race_of_name(self.name_id) != self.race:
            raise ContractViolation("implicit profile race must follow its name",
                                    name_id=self.name_id, race=self.race)

    def with_identity(self, name_id, race):
        return replace(self, name_id=name_id, race=race)

    def with_identity_of(self, other):
        """Same qualifications, the identity (name and race) of another profile."""
        return self.with_identity(other.name_id, other.race)

    def as_explicit(self):
        return replace(self, explicit=True)

    def to_dict(self):
        return {
            "family": self.family,
            "institution": self.institution,
            "qualifications": list(self.qualifications),
            "name_id": self.name_id,
            "race": self.race,
            "explicit": self.explicit,
        }

    @classmethod
    def from_dict(cls, record):
        return cls(
            family=record["family"],
            institution=int(record["institution"]),
            qualifications=tuple(record["qualifications"]),
            name_id=int(record["name_id"]),
            race=record["race"],
            explicit=bool(record.get("explicit", False)),
        )


def _sample_qualifications(spec, rng):
    values = []
    for domain in spec.domains:
        if domain.continuous:
            values.append(round(float(rng.uniform(domain.low, domain.high)), 2))
        else:
            values.append(int(rng.integers(domain.low, domain.high + 1)))
    return tuple(values)


def sample_profile(spec, rng, explicit=False, institution=None):
    """
    Uniform draw over institution, name (hence race) and every qualification domain.
    Draw order is fixed: institution (skipped when given), qualifications, name.
    """
    if institution is None:
        institution = int(rng.integers(0, spec.n_institutions))
    qualifications = _sample_qualifications(spec, rng)
    name_id = int(rng.integers(0, len(config.RACES) * config.NAMES_PER_RACE))
    return Profile(spec.family, institution, qualifications, name_id, race_of_name(name_id), explicit)


def race_variants(profile, roster, rng):
    """
    Four copies of profile, one per race in roster order, with identical qualifications.
    The variant for the profile's own race is the profile itself; the others get a name
    drawn uniformly from that race's roster.
    """
    variants = []
    for race in config.RACES:
        if race == profile.race:
            variants.append(profile)
            continue
        ids = roster.name_ids(race)
        name_id = ids[int(rng.integers(0, len(ids)))]
        variants.append(profile.with_identity(name_id, race))
    return variants

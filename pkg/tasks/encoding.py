"""
Symbolic prompt encoding: one token per field value, fixed context length,
identity token at a template-fixed position and ASK as the readout position.
"""
import logging
import math
import re
from dataclasses import dataclass, replace

import config
from errors import ContextLengthError, ContractViolation

logger = logging.getLogger(__name__)

TEMPLATES = config.TEMPLATES
TEMPLATE_MARKERS = {"free": config.TPL_A, "list": config.TPL_B, "explicit": config.TPL_EXPL}
TEMPLATE_LAYOUTS = {
    "free": ("BOS", "TPL", "INST", "ID", "Q1", "Q2", "Q3", "ASK"),
    "list": ("BOS", "TPL", "INST", "Q1", "Q2", "Q3", "ID", "ASK"),
    "explicit": ("BOS", "TPL", "INST", "ID", "Q1", "Q2", "Q3", "ASK"),
}
NAME_POSITIONS = {template: layout.index("ID") for template, layout in TEMPLATE_LAYOUTS.items()}

SUFFIX_STRATEGIES = ("none", "simple", "noaff", "very1", "very2", "very4", "illegal")
_VERY_PATTERN = re.compile(r"^very(\d+)$")

_FIXED_NAMES = {
    config.PAD: "PAD", config.BOS: "BOS", config.ASK: "ASK",
    config.TPL_A: "TPL_A", config.TPL_B: "TPL_B", config.TPL_EXPL: "TPL_EXPL",
    config.VERY: "VERY", config.SIMPLE: "SIMPLE", config.NOAFF: "NOAFF",
    config.VERYHDR: "VERYHDR", config.ILLEGAL: "ILLEGAL", config.RESERVED: "RESERVED",
    config.YES_TOKEN: "YES", config.NO_TOKEN: "NO",
}
_RANGES = (
    (config.RACE_TOKEN_BASE, len(config.RACES), lambda i: f"RACE_{config.RACES[i].upper()}"),
    (config.UNI_BASE, 20, lambda i: f"UNI_{i}"),
    (config.ROLE_BASE, 40, lambda i: f"ROLE_{i}"),
    (config.GPA_BASE, config.N_GPA_BUCKETS, lambda i: f"GPA_B{i}"),
    (config.EC_BASE, 9, lambda i: f"EC_{i}"),
    (config.LET_BASE, 4, lambda i: f"LET_{i}"),
    (config.EXP_BASE, 21, lambda i: f"EXP_{i}"),
    (config.DEG_BASE, 4, lambda i: f"DEG_{i}"),
    (config.REF_BASE, 4, lambda i: f"REF_{i}"),
    (config.NAME_BASE, len(config.RACES) * config.NAMES_PER_RACE, lambda i: f"NAME_{i}"),
)


# ---------- TOKEN TABLE ----------

def token_name(token_id):
    token_id = int(token_id)
    if token_id in _FIXED_NAMES:
        return _FIXED_NAMES[token_id]
    for base, count, label in _RANGES:
        if base <= token_id < base + count:
            return label(token_id - base)
    raise ContractViolation(f"token id {token_id} outside the vocabulary", token_id=token_id)


def decode(token_ids):
    return [token_name(t) for t in token_ids]


def gpa_bucket(gpa):
    """Nearest 0.1 bucket over [1.0, 4.0], halves rounded up."""
    scaled = round((float(gpa) - 1.0) * 10.0, 6)
    return min(config.N_GPA_BUCKETS - 1, max(0, int(math.floor(scaled + 0.5))))


def gpa_of_bucket(bucket):
    return round(1.0 + 0.1 * bucket, 1)


def institution_token(family, index):
    return (config.UNI_BASE if family == "admissions" else config.ROLE_BASE) + int(index)


def race_token(race):
    return config.RACE_TOKEN_BASE + config.RACES.index(race)


def name_token(name_id):
    return config.NAME_BASE + int(name_id)


def qualification_tokens(family, qualifications):
    if family == "admissions":
        gpa, ecs, letters = qualifications
        return (config.GPA_BASE + gpa_bucket(gpa), config.EC_BASE + int(ecs), config.LET_BASE + int(letters))
    experience, degree, referrals = qualifications
    return (config.EXP_BASE + int(experience), config.DEG_BASE + int(degree), config.REF_BASE + int(referrals))


# ---------- PROMPTS ----------

@dataclass(frozen=True)
class EncodedPrompt:
    tokens: tuple
    template: str
    name_position: int
    final_position: int
    suffix: str = "none"

    def __post_init__(self):
        if self.tokens[self.final_position] != config.ASK:
            raise ContractViolation("final position must hold ASK", final_position=self.final_position)

    @property
    def length(self):
        return len(self.tokens)

    def with_identity_token(self, token):
        """Copy with the name (or race) token replaced."""
        tokens = list(self.tokens)
        tokens[self.name_position] = token
        return replace(self, tokens=tuple(tokens))

    def decoded(self):
        return decode(self.tokens)

    def to_dict(self):
        return {
            "tokens": list(self.tokens),
            "template": self.template,
            "name_position": self.name_position,
            "final_position": self.final_position,
            "suffix": self.suffix,
        }

    @classmethod
    def from_dict(cls, record):
        return cls(tuple(int(t) for t in record["tokens"]), record["template"],
                   int(record["name_position"]), int(record["final_position"]), record.get("suffix", "none"))


def render_prompt(profile, template, context_length=config.CONTEXT_LENGTH):
    """
    Deterministic token sequence for a profile under one template, PAD-filled to context length.

    :raises ContractViolation: explicit template on an implicit profile or vice versa.
    """
    if template not in TEMPLATE_LAYOUTS:
        raise ContractViolation(f"unknown template '{template}'", template=template)
    if (template == "explicit") != profile.explicit:
        raise ContractViolation(f"template '{template}' does not match the profile's race mode",
                                template=template, explicit=profile.explicit)

    q1, q2, q3 = qualification_tokens(profile.family, profile.qualifications)
    identity = race_token(profile.race) if profile.explicit else name_token(profile.name_id)
    fields = {
        "BOS": config.BOS,
        "TPL": TEMPLATE_MARKERS[template],
        "INST": institution_token(profile.family, profile.institution),
        "ID": identity,
        "Q1": q1, "Q2": q2, "Q3": q3,
        "ASK": config.ASK,
    }
    layout = TEMPLATE_LAYOUTS[template]
    if len(layout) > context_length:
        raise ContextLengthError("template longer than the context", template=template,
                                 context_length=context_length)
    tokens = tuple(fields[slot] for slot in layout) + (config.PAD,) * (context_length - len(layout))
    return EncodedPrompt(tokens, template, NAME_POSITIONS[template], layout.index("ASK"))


def suffix_tokens(strategy):
    if strategy in (None, "none"):
        return ()
    if strategy == "simple":
        return (config.SIMPLE,)
    if strategy == "noaff":
        return (config.NOAFF,)
    if strategy == "illegal":
        return (config.ILLEGAL,)
    match = _VERY_PATTERN.match(str(strategy))
    if match and int(match.group(1)) >= 1:
        return (config.VERYHDR,) + (config.VERY,) * int(match.group(1))
    raise ContractViolation(f"unknown fairness suffix '{strategy}'", strategy=strategy)


def append_fairness_suffix(prompt, strategy):
    """
    Insert the strategy's suffix tokens immediately before ASK, consuming trailing PADs.

    :raises ContextLengthError: the suffix does not fit in the context.
    """
    extra = suffix_tokens(strategy)
    if not extra:
        return prompt
    ask = prompt.final_position
    new_final = ask + len(extra)
    if new_final >= prompt.length:
        raise ContextLengthError(f"suffix '{strategy}' overflows the context", strategy=strategy,
                                 needed=new_final + 1, context_length=prompt.length)
    body = prompt.tokens[:ask] + extra + (config.ASK,)
    tokens = body + (config.PAD,) * (prompt.length - len(body))
    label = strategy if prompt.suffix == "none" else f"{prompt.suffix}+{strategy}"
    return replace(prompt, tokens=tokens, final_position=new_final, suffix=label)


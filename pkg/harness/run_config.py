"""
Run configuration: one dataclass tree with config.py defaults, loadable from JSON and
overridable from CLI flags (flags win).
"""
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import config
from alignment.das import DasConfig
from errors import UsageError
from file_helpers import read_json
from refmodel.trainer import TrainConfig
from refmodel.transformer import ModelConfig
from seeds import derive_seed, derived_seeds
from tasks.encoding import SUFFIX_STRATEGIES
from interventions.subspace import SCOPES

logger = logging.getLogger(__name__)

FORMATS = ("json", "csv", "svg")
SEED_LABELS = ("teacher", "model", "data", "split", "panel", "das", "random-subspace")


def desk_das_config():
    """
    DAS profile the pipeline runs with: DasConfig's defaults with the desk-scale epoch
    count and rotation learning rate of config.py.
    """
    return DasConfig(epochs=config.DESK_DAS_EPOCHS, rotation_lr=config.DESK_DAS_ROTATION_LR)


@dataclass(frozen=True)
class TeacherConfig:
    calibrate: bool = True
    target_gap: float = config.CALIBRATION_TARGET_GAP
    samples: int = config.CALIBRATION_SAMPLES
    null: bool = False


@dataclass(frozen=True)
class TrialConfig:
    n_trials: int = config.TRIALS
    panel_size: int = config.TRIAL_PANEL_SIZE

    def __post_init__(self):
        if self.n_trials == 1 or self.n_trials < 0 or self.panel_size < 1:
            raise UsageError("trials must be 0 (off) or at least 2, over a nonempty panel",
                             n_trials=self.n_trials, panel_size=self.panel_size)


@dataclass(frozen=True)
class SplitConfig:
    train: int = config.SPLIT_TRAIN
    dev: int = config.SPLIT_DEV
    test: int = config.SPLIT_TEST


@dataclass(frozen=True)
class RunConfig:
    family: str = "admissions"
    template: str = "free"
    suffix: str = "none"
    seed: int = config.MASTER_SEED
    out_dir: str = config.DEFAULT_OUT_DIR
    tap: tuple = None                      # None → best from sweep
    k: int = None
    scope: str = "batch"
    n_profiles: int = config.PANEL_PROFILES
    pairs_per_class: int = config.PAIRS_PER_CLASS_PER_INSTITUTION
    planted: bool = False
    reverse: bool = False
    sweep_layers: tuple = None             # None → every layer 0..L
    sweep_positions: tuple = None          # None → every position
    formats: tuple = FORMATS
    model: ModelConfig = field(default_factory=ModelConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    das: DasConfig = field(default_factory=desk_das_config)
    trials: TrialConfig = field(default_factory=TrialConfig)
    split: SplitConfig = field(default_factory=SplitConfig)

    def __post_init__(self):
        checks = (
            (self.family in config.FAMILIES, "family", self.family),
            (self.template in config.TEMPLATES, "template", self.template),
            (self.suffix in SUFFIX_STRATEGIES, "suffix", self.suffix),
            (self.scope in SCOPES, "scope", self.scope),
        )
        for ok, name, value in checks:
            if not ok:
                raise UsageError(f"unknown {name} '{value}'", **{name: value})
        unknown = [f for f in self.formats if f not in FORMATS]
        if unknown:
            raise UsageError(f"unknown report format '{unknown[0]}'", formats=",".join(self.formats))
        if self.n_profiles < 1 or self.pairs_per_class < 1:
            raise UsageError("panel size and pairs per class must be positive",
                             n_profiles=self.n_profiles, pairs_per_class=self.pairs_per_class)
        if self.tap is not None:
            object.__setattr__(self, "tap", tuple(int(x) for x in self.tap))
        for name in ("sweep_layers", "sweep_positions"):
            value = getattr(self, name)
            if value is not None:
                if len(value) == 0 or min(value) < 0:
                    raise UsageError(f"{name} must list non-negative indices", **{name: str(value)})
                object.__setattr__(self, name, tuple(int(x) for x in value))
        object.__setattr__(self, "formats", tuple(self.formats))

    @property
    def setting(self):
        return setting_id(self.family, self.template)

    def seeds(self):
        return derived_seeds(self.seed, SEED_LABELS)

    def seed_for(self, label):
        return derive_seed(self.seed, label)

    def for_setting(self, setting):
        family, template = parse_setting(setting)
        return replace(self, family=family, template=template)

    def das_config(self):
        """DasConfig with the --k / --mask flags folded in."""
        return self.das if self.k is None else replace(self.das, k=self.k)

    def to_dict(self):
        record = asdict(self)
        record["tap"] = list(self.tap) if self.tap is not None else None
        for name in ("sweep_layers", "sweep_positions"):
            record[name] = list(getattr(self, name)) if getattr(self, name) is not None else None
        record["formats"] = list(self.formats)
        record["das"] = self.das.to_dict()
        record["seeds"] = self.seeds()
        return record

    @classmethod
    def from_dict(cls, record):
        record = {k: v for k, v in dict(record).items() if k != "seeds"}
        known = {f.name for f in fields(cls)}
        extra = sorted(set(record) - known)
        if extra:
            raise UsageError(f"unknown configuration key '{extra[0]}'", key=extra[0])
        nested = {
            "model": ModelConfig.from_dict,
            "teacher": lambda r: TeacherConfig(**r),
            "train": lambda r: TrainConfig(**r),
            "das": lambda r: DasConfig.from_dict({**desk_das_config().to_dict(), **r}),
            "trials": lambda r: TrialConfig(**r),
            "split": lambda r: SplitConfig(**r),
        }
        for name, build in nested.items():
            if name in record:
                try:
                    record[name] = build(record[name])
                except TypeError as e:
                    raise UsageError(f"bad '{name}' configuration: {e}", section=name)
        for name in ("tap", "sweep_layers", "sweep_positions"):
            if record.get(name) is not None:
                record[name] = tuple(record[name])
        if "formats" in record:
            record["formats"] = tuple(record["formats"])
        return cls(**record)

    @classmethod
    def load(cls, path=None, overrides=None):
        """JSON file (optional) first, then the non-None overrides."""
        base = cls.from_dict(read_json(path)) if path else cls()
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        das_flags = {}
        if overrides.pop("mask", False):
            das_flags["mask_mode"] = True
        if das_flags:
            overrides["das"] = replace(base.das, **das_flags)
        if "n_trials" in overrides:
            overrides["trials"] = replace(base.trials, n_trials=overrides.pop("n_trials"))
        run_config = replace(base, **overrides)
        logger.debug(f"Run configuration: {run_config.to_dict()}")
        return run_config


def setting_id(family, template):
    return f"{family}-{template}"


def parse_setting(setting):
    family, _, template = setting.partition("-")
    if family not in config.FAMILIES or template not in config.TEMPLATES:
        raise UsageError(f"unknown setting '{setting}'", setting=setting)
    return family, template


def parse_indices(text):
    """'0,2,4' → (0, 2, 4)."""
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got '{text}'", value=text)


def parse_tap(text):
    """'LAYER:POS' → (layer, position)."""
    try:
        layer, position = (int(part) for part in text.split(":"))
    except ValueError:
        raise UsageError(f"tap must look like LAYER:POS, got '{text}'", tap=text)
    return layer, position

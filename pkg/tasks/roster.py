import logging
from dataclasses import dataclass
from pathlib import Path

import config
from errors import DatasetIntegrityError
from file_helpers import read_json

logger = logging.getLogger(__name__)

INSTITUTIONS_FILE = Path(config.PROJECT_ROOT) / "tasks" / "data" / "institutions.json"


@dataclass(frozen=True)
class NameRoster:
    """
    race → 100 names, races in (asian, black, latino, white) order.

    Global name ids run 0..399 in that race order; id // 100 is the race index.
    """
    names: dict

    def __post_init__(self):
        if tuple(self.names) != config.RACES:
            raise DatasetIntegrityError("roster must list exactly the races " + ", ".join(config.RACES),
                                        races=list(self.names))
        seen = {}
        for race, names in self.names.items():
            if len(names) != config.NAMES_PER_RACE:
                raise DatasetIntegrityError(f"roster for {race} has {len(names)} names",
                                            race=race, count=len(names))
            if len(set(names)) != len(names):
                raise DatasetIntegrityError(f"duplicate name within {race}", race=race)
            for name in names:
                if name in seen:
                    raise DatasetIntegrityError(f"name '{name}' listed under {seen[name]} and {race}",
                                                name=name)
                seen[name] = race
        object.__setattr__(self, "names", {race: tuple(names) for race, names in self.names.items()})

    def name_id(self, race, index):
        return config.RACES.index(race) * config.NAMES_PER_RACE + index

    def name_ids(self, race):
        start = config.RACES.index(race) * config.NAMES_PER_RACE
        return range(start, start + config.NAMES_PER_RACE)

    def name_of(self, name_id):
        race = race_of_name(name_id)
        return self.names[race][name_id % config.NAMES_PER_RACE]

    def __len__(self):
        return sum(len(names) for names in self.names.values())


def race_of_name(name_id):
    if not 0 <= name_id < len(config.RACES) * config.NAMES_PER_RACE:
        raise DatasetIntegrityError(f"name id {name_id} outside the roster", name_id=name_id)
    return config.RACES[name_id // config.NAMES_PER_RACE]


def load_roster(path=None):
    """Load and validate the name roster JSON (keys asian/black/latino/white)."""
    path = Path(path) if path else Path(config.ROSTER_FILE)
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise DatasetIntegrityError("roster file must hold a JSON object", path=str(path))
    ordered = {race: raw.get(race, []) for race in config.RACES}
    extra = set(raw) - set(config.RACES)
    if extra:
        raise DatasetIntegrityError("unknown races in roster: " + ", ".join(sorted(extra)), path=str(path))
    roster = NameRoster(ordered)
    logger.debug(f"📂 Roster loaded from {path}: {len(roster)} names")
    return roster


def load_institutions(family, path=None):
    """The 20 universities (admissions) or 40 roles (hiring), in table order."""
    raw = read_json(path or INSTITUTIONS_FILE)
    if family not in raw:
        raise DatasetIntegrityError(f"no institutions listed for family '{family}'", family=family)
    return tuple(raw[family])

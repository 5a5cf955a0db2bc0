"""Rule engine mapping catalogue records to sets of ISCED 2011 levels.

Rules fall into three specificity tiers, evaluated in order:

1. rules with a DQR predicate (direct DQR alignment);
2. rules with keyword or KldB-prefix predicates;
3. plain qualification/requirement rules.

The first tier with at least one matching rule decides; its matching rules'
outputs are unioned. A keyword rule therefore overrides the plain rule for
the same qualification and requirement level (``Professor`` -> 84 rather than
``{74, 84}``), while plain rules for the same record still combine
(vocational training at requirement level 2 -> ``{35_2, 35_3}``).
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import OccupationRecord, QualificationGroup, consolidate_qualification
from .errors import ConfigInvalid, NoRuleMatched


class IscedLevel(str, enum.Enum):
    L24 = "24"
    L35_2 = "35_2"
    L35_3 = "35_3"
    L55 = "55"
    L64 = "64"
    L65 = "65"
    L74 = "74"
    L75 = "75"
    L84 = "84"

    @classmethod
    def parse(cls, value: "str | IscedLevel") -> "IscedLevel":
        if isinstance(value, IscedLevel):
            return value
        v = str(value).strip().removeprefix("L").replace("\\_", "_")
        try:
            return cls(v)
        except ValueError:
            raise ValueError(f"ISCED level {value!r} is not representable") from None


ISCED_ORDER = {lvl: i for i, lvl in enumerate(IscedLevel)}


def sort_levels(levels: Iterable[IscedLevel]) -> list[IscedLevel]:
    return sorted(levels, key=ISCED_ORDER.__getitem__)


@dataclass(frozen=True)
class IscedRule:
    output: frozenset[IscedLevel]
    priority: int
    qualification: QualificationGroup | None = None  # None = wildcard
    requirement_levels: frozenset[int] = frozenset({1, 2, 3, 4})
    keyword_patterns: tuple[str, ...] = ()
    dqr_levels: frozenset[int] | None = None
    kldb_prefixes: tuple[str, ...] = ()
    note: str = ""
    _compiled: tuple[re.Pattern, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not self.output:
            raise ConfigInvalid("output", f"rule {self.priority} has an empty output")
        if not self.requirement_levels <= {1, 2, 3, 4}:
            raise ConfigInvalid("requirement_levels", f"rule {self.priority}")
        if self.dqr_levels is not None and not self.dqr_levels <= set(range(1, 9)):
            raise ConfigInvalid("dqr_levels", f"rule {self.priority}")
        compiled = []
        for pat in self.keyword_patterns:
            if pat.startswith("re:"):
                compiled.append(re.compile(pat[3:], re.IGNORECASE))
            else:
                compiled.append(re.compile(re.escape(pat), re.IGNORECASE))
        object.__setattr__(self, "_compiled", tuple(compiled))

    @property
    def tier(self) -> int:
        if self.dqr_levels is not None:
            return 0
        if self.keyword_patterns or self.kldb_prefixes:
            return 1
        return 2

    def matches(self, record: OccupationRecord) -> bool:
        if self.qualification is not None and record.qualification is not self.qualification:
            return False
        if record.code.requirement_level not in self.requirement_levels:
            return False
        if self.dqr_levels is not None and record.dqr_level not in self.dqr_levels:
            return False
        if self._compiled and not any(p.search(record.term) for p in self._compiled):
            return False
        if self.kldb_prefixes and not any(record.code.raw.startswith(p) for p in self.kldb_prefixes):
            return False
        return True

    def to_json(self) -> dict:
        out: dict = {
            "priority": self.priority,
            "qualification": None if self.qualification is None else self.qualification.value,
            "requirement_levels": sorted(self.requirement_levels),
            "keyword_patterns": list(self.keyword_patterns),
            "dqr_levels": None if self.dqr_levels is None else sorted(self.dqr_levels),
            "kldb_prefixes": list(self.kldb_prefixes),
            "output": [l.value for l in sort_levels(self.output)],
        }
        if self.note:
            out["note"] = self.note
        return out

    @classmethod
    def from_json(cls, d: dict) -> "IscedRule":
        try:
            qual = d.get("qualification")
            return cls(
                output=frozenset(IscedLevel.parse(x) for x in d["output"]),
                priority=int(d["priority"]),
                qualification=None if qual in (None, "*") else consolidate_qualification(qual),
                requirement_levels=frozenset(d.get("requirement_levels", [1, 2, 3, 4])),
                keyword_patterns=tuple(d.get("keyword_patterns", ())),
                dqr_levels=None if d.get("dqr_levels") is None else frozenset(d["dqr_levels"]),
                kldb_prefixes=tuple(d.get("kldb_prefixes", ())),
                note=d.get("note", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigInvalid):
                raise
            raise ConfigInvalid("isced_rules", f"bad rule {d!r}: {exc}") from None


def validate_ruleset(rules: Sequence[IscedRule]) -> list[IscedRule]:
    prios = [r.priority for r in rules]
    if len(set(prios)) != len(prios):
        raise ConfigInvalid("isced_rules", "rule priorities must be unique")
    return sorted(rules, key=lambda r: r.priority)


def ruleset_from_json(data: list) -> list[IscedRule]:
    if not isinstance(data, list) or not data:
        raise ConfigInvalid("isced_rules", "ruleset must be a non-empty JSON array")
    return validate_ruleset([IscedRule.from_json(d) for d in data])


def ruleset_to_json(rules: Sequence[IscedRule]) -> list[dict]:
    return [r.to_json() for r in rules]


def load_ruleset(path: str | Path) -> list[IscedRule]:
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except OSError as exc:
        raise ConfigInvalid("isced_rules", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("isced_rules", f"{path} is not JSON: {exc}") from exc
    return ruleset_from_json(data)


@lru_cache(maxsize=1)
def _default_json() -> str:
    return resources.files("occu_align.data").joinpath("isced_rules.json").read_text("utf-8")


def default_ruleset() -> list[IscedRule]:
    return ruleset_from_json(json.loads(_default_json()))


def map_to_isced(record: OccupationRecord, ruleset: Sequence[IscedRule]) -> frozenset[IscedLevel]:
    if not ruleset:
        raise ConfigInvalid("isced_rules", "ruleset is empty")
    by_tier: dict[int, set[IscedLevel]] = {}
    for rule in ruleset:
        if rule.matches(record):
            by_tier.setdefault(rule.tier, set()).update(rule.output)
    if not by_tier:
        raise NoRuleMatched(
            f"no ISCED rule for {record.term!r} ({record.qualification.value}, "
            f"requirement {record.code.requirement_level}, dqr {record.dqr_level})"
        )
    return frozenset(by_tier[min(by_tier)])


def isced_labels(levels: Iterable[IscedLevel]) -> list[str]:
    return [l.value for l in sort_levels(levels)]

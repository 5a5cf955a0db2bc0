"""Occupational catalogue: KldB codes, qualification groups, query composition
and catalogue ingestion."""

from __future__ import annotations

import enum
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import httpx

from .errors import (
    EmptyTitle,
    HttpError,
    IoFailure,
    MalformedRecord,
    NotFiveDigits,
    OccuAlignError,
    RequirementOutOfRange,
    SchemaMismatch,
    UnknownCategory,
)
from . import provenance

log = logging.getLogger(__name__)

JOB_TITLE_SEP = "[JOB_TITLE_SEP]"
QUALIFICATION_SEP = "[QUALIFICATION_SEP]"
SKILL_SEP = "[SKILL_SEP]"
SEPARATORS = (JOB_TITLE_SEP, QUALIFICATION_SEP, SKILL_SEP)
SKILL_DELIMITER = "; "

_SEP_RE = re.compile("|".join(re.escape(s) for s in SEPARATORS))


# --------------------------------------------------------------------------
# KldB codes
# --------------------------------------------------------------------------

LEVELS = ("area", "main_group", "group", "subgroup", "type", "requirement")


@dataclass(frozen=True, order=True)
class KldbCode:
    raw: str
    area: int = field(compare=False)
    main_group: str = field(compare=False)
    group: str = field(compare=False)
    subgroup: str = field(compare=False)
    type_code: str = field(compare=False)
    requirement_level: int = field(compare=False)
    managerial: bool = field(compare=False)

    def label(self, level: str) -> str:
        """Class label of this code at one hierarchy level (see ``LEVELS``)."""
        if level == "area":
            return self.raw[0]
        if level == "main_group":
            return self.main_group
        if level == "group":
            return self.group
        if level == "subgroup":
            return self.subgroup
        if level == "type":
            return self.type_code
        if level == "requirement":
            return str(self.requirement_level)
        raise KeyError(level)

    def __str__(self) -> str:
        return self.raw


def parse_kldb_code(raw: str) -> KldbCode:
    if not isinstance(raw, str) or len(raw) != 5 or not raw.isascii() or not raw.isdigit():
        raise NotFiveDigits(f"KldB code must be exactly five digits, got {raw!r}")
    requirement = int(raw[4])
    if requirement not in (1, 2, 3, 4):
        raise RequirementOutOfRange(f"requirement digit of {raw!r} must be 1-4, got {requirement}")
    return KldbCode(
        raw=raw,
        area=int(raw[0]),
        main_group=raw[:2],
        group=raw[:3],
        subgroup=raw[:4],
        type_code=raw,
        requirement_level=requirement,
        managerial=raw[3] == "9",
    )


def level_label(code: KldbCode | str, level: str) -> str:
    if isinstance(code, str):
        code = parse_kldb_code(code)
    return code.label(level)


# --------------------------------------------------------------------------
# Qualifications
# --------------------------------------------------------------------------


class QualificationGroup(str, enum.Enum):
    Helper = "Helper"
    VocationalTraining = "VocationalTraining"
    AdditionalVocationalTraining = "AdditionalVocationalTraining"
    UniversityDegree = "UniversityDegree"
    CivilServant = "CivilServant"
    ArmedForces = "ArmedForces"
    Meister = "Meister"
    Techniker = "Techniker"
    Ausübungsformen = "Ausübungsformen"

    @property
    def label(self) -> str:
        return qualification_table().labels[self]


@dataclass(frozen=True)
class QualificationTable:
    lookup: dict[str, QualificationGroup]
    labels: dict[QualificationGroup, str]
    categories: dict[str, QualificationGroup]
    management_suffix: str

    @classmethod
    def from_json(cls, data: dict) -> "QualificationTable":
        lookup: dict[str, QualificationGroup] = {}
        labels: dict[QualificationGroup, str] = {}
        categories: dict[str, QualificationGroup] = {}
        for name, spec in data["groups"].items():
            group = QualificationGroup(name)
            labels[group] = spec["label"]
            keys = [name, group.name, spec["label"], *spec.get("aliases", [])]
            for cat in spec["categories"]:
                categories[cat] = group
                keys.append(cat)
            for key in keys:
                norm = _norm_category(key)
                if lookup.get(norm, group) is not group:
                    raise ValueError(f"category {key!r} mapped to two groups")
                lookup[norm] = group
        missing = set(QualificationGroup) - set(labels)
        if missing:
            raise ValueError(f"qualification table lacks groups: {sorted(g.value for g in missing)}")
        return cls(lookup, labels, categories, data.get("management_suffix", "with management duties"))


def _norm_category(value: str) -> str:
    return " ".join(value.split()).casefold()


_table_override: QualificationTable | None = None


@lru_cache(maxsize=1)
def _default_table() -> QualificationTable:
    text = resources.files("occu_align.data").joinpath("qualifications.json").read_text("utf-8")
    return QualificationTable.from_json(json.loads(text))


def qualification_table() -> QualificationTable:
    return _table_override or _default_table()


def use_qualification_table(path: str | Path | None) -> None:
    """Swap the qualification mapping (e.g. for German slot renderings)."""
    global _table_override
    if path is None:
        _table_override = None
        return
    _table_override = QualificationTable.from_json(json.loads(Path(path).read_text("utf-8")))


def consolidate_qualification(raw_category: str | QualificationGroup) -> QualificationGroup:
    if isinstance(raw_category, QualificationGroup):
        return raw_category
    try:
        return qualification_table().lookup[_norm_category(raw_category)]
    except (KeyError, AttributeError):
        raise UnknownCategory(f"unknown qualification category {raw_category!r}") from None


# --------------------------------------------------------------------------
# Records and queries
# --------------------------------------------------------------------------


def clean_skills(skills: Iterable[str]) -> list[str]:
    """Strip, drop empties and exact duplicates, keep first-seen order."""
    seen: set[str] = set()
    out = []
    for s in skills:
        s = s.strip()
        if s and s not in seen:
            seen.add(s)
            out.append(s)
    return out


@dataclass(frozen=True)
class OccupationRecord:
    term: str
    code: KldbCode
    qualification_raw: str
    qualification: QualificationGroup
    skills: tuple[str, ...] = ()
    dqr_level: int | None = None

    def __post_init__(self):
        if not self.term or not self.term.strip():
            raise EmptyTitle("record term is empty")
        if any(not s for s in self.skills) or len(set(self.skills)) != len(self.skills):
            raise MalformedRecord("skills contain empty strings or duplicates")
        if self.dqr_level is not None and not 1 <= self.dqr_level <= 8:
            raise MalformedRecord(f"dqr level {self.dqr_level} outside 1-8")

    @classmethod
    def create(
        cls,
        term: str,
        kldb: str,
        qualification: str,
        skills: Sequence[str] = (),
        dqr: int | None = None,
    ) -> "OccupationRecord":
        return cls(
            term=term.strip(),
            code=parse_kldb_code(kldb),
            qualification_raw=qualification,
            qualification=consolidate_qualification(qualification),
            skills=tuple(clean_skills(skills)),
            dqr_level=dqr,
        )

    def query(self) -> "ComposedQuery":
        return compose_query(self.term, self.qualification, self.code.managerial, self.skills)

    def to_json(self) -> dict:
        out = {
            "term": self.term,
            "kldb": self.code.raw,
            "qualification": self.qualification_raw,
            "skills": list(self.skills),
        }
        if self.dqr_level is not None:
            out["dqr"] = self.dqr_level
        return out


@dataclass(frozen=True)
class ComposedQuery:
    text: str

    def __str__(self) -> str:
        return self.text

    def slots(self) -> tuple[str, str, str]:
        return split_query(self.text)


def _slot(text: str) -> str:
    return " ".join(_SEP_RE.sub(" ", text).split())


def qualification_slot(qualification: QualificationGroup | str | None, managerial: bool) -> str:
    if qualification is None:
        return ""
    group = consolidate_qualification(qualification)
    text = group.label
    if managerial:
        text = f"{text} {qualification_table().management_suffix}"
    return text


def compose_query(
    title: str,
    qualification: QualificationGroup | str | None = None,
    managerial: bool = False,
    skills: Sequence[str] = (),
) -> ComposedQuery:
    title = _slot(title or "")
    if not title:
        raise EmptyTitle("job title is empty")
    qual = qualification_slot(qualification, managerial)
    skill_text = SKILL_DELIMITER.join(s for s in (_slot(s) for s in skills) if s)
    return ComposedQuery(f"{JOB_TITLE_SEP} {title} {QUALIFICATION_SEP} {qual} {SKILL_SEP} {skill_text}")


def split_query(text: str) -> tuple[str, str, str]:
    """Inverse of :func:`compose_query`: ``(title, qualification, skills)``."""
    m = re.fullmatch(
        re.escape(JOB_TITLE_SEP) + r" (.*) " + re.escape(QUALIFICATION_SEP)
        + r" (.*) " + re.escape(SKILL_SEP) + r" (.*)",
        text,
        flags=re.S,
    )
    if m is None:
        raise MalformedRecord(f"not a composed query: {text!r}")
    return m.group(1), m.group(2), m.group(3)


# --------------------------------------------------------------------------
# Catalogue IO
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Reject:
    line: int
    error: str
    message: str


class Catalogue(NamedTuple):
    records: list[OccupationRecord]
    rejects: list[Reject]


def record_from_json(obj: object) -> OccupationRecord:
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not a JSON object")
    term, kldb, qual = obj.get("term"), obj.get("kldb"), obj.get("qualification")
    skills = obj.get("skills", [])
    dqr = obj.get("dqr")
    if not isinstance(term, str):
        raise MalformedRecord("field 'term' must be a string")
    if not isinstance(kldb, str):
        raise NotFiveDigits(f"field 'kldb' must be a five-digit string, got {kldb!r}")
    if not isinstance(qual, str):
        raise MalformedRecord("field 'qualification' must be a string")
    if not isinstance(skills, list) or not all(isinstance(s, str) for s in skills):
        raise MalformedRecord("field 'skills' must be an array of strings")
    if dqr is not None and (isinstance(dqr, bool) or not isinstance(dqr, int)):
        raise MalformedRecord("field 'dqr' must be an integer")
    return OccupationRecord.create(term, kldb, qual, skills, dqr)


def load_catalogue(path: str | Path, *, strict: bool = False) -> Catalogue:
    """Read a JSON Lines catalogue.

    In lenient mode (default) invalid lines are reported in ``rejects`` with
    their 1-based line number; ``strict=True`` raises on the first one.
    """
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read catalogue {path}: {exc}") from exc
    records: list[OccupationRecord] = []
    rejects: list[Reject] = []
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(f"invalid JSON: {exc.msg}") from None
                if provenance.is_header(obj):
                    continue
                records.append(record_from_json(obj))
            except OccuAlignError as exc:
                if strict:
                    raise MalformedRecord(f"line {lineno}: {type(exc).__name__}: {exc}") from exc
                rejects.append(Reject(lineno, type(exc).__name__, str(exc)))
    if rejects:
        log.warning("catalogue %s: %d rejected lines", path, len(rejects))
    return Catalogue(records, rejects)


def write_catalogue(records: Iterable[OccupationRecord], path: str | Path, prov: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if prov is not None:
            fh.write(provenance.header_line(prov))
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# Occupational database client
# --------------------------------------------------------------------------

BERUFENET_ENV = "OCCU_BERUFENET_URL"


@dataclass(frozen=True)
class OccupationDetails:
    skills: list[str]
    qualification_raw: str


def _transient(status: int) -> bool:
    return status == 429 or status >= 500


def fetch_occupation_details(
    base_url: str | None,
    occupation_id: str,
    *,
    client: httpx.Client | None = None,
    retries: int = 3,
    backoff: float = 0.5,
    max_backoff: float = 8.0,
    timeout: float = 10.0,
    sleep: Callable[[float], None] = time.sleep,
) -> OccupationDetails:
    """GET ``{base_url}/occupations/{id}`` and parse skills + qualification.

    Transport errors, 429 and 5xx responses are retried with capped
    exponential backoff; other 4xx fail immediately.
    """
    base_url = base_url or os.environ.get(BERUFENET_ENV)
    if not base_url:
        raise HttpError(f"no occupational database URL (set {BERUFENET_ENV} or --berufenet-url)")
    url = f"{base_url.rstrip('/')}/occupations/{occupation_id}"
    own_client = client is None
    client = client or httpx.Client(timeout=timeout)
    try:
        attempt = 0
        while True:
            try:
                resp = client.get(url)
            except httpx.TransportError as exc:
                if attempt >= retries:
                    raise HttpError(f"GET {url} failed: {exc}") from exc
            else:
                if resp.status_code < 400:
                    break
                if not _transient(resp.status_code) or attempt >= retries:
                    raise HttpError(f"GET {url} returned {resp.status_code}", resp.status_code)
            sleep(min(max_backoff, backoff * 2**attempt))
            attempt += 1
    finally:
        if own_client:
            client.close()

    try:
        body = resp.json()
    except ValueError:
        raise SchemaMismatch(f"response from {url} is not JSON") from None
    if not isinstance(body, dict):
        raise SchemaMismatch("response body must be an object")
    skills, qual = body.get("skills"), body.get("qualification")
    if not isinstance(skills, list) or not all(isinstance(s, str) for s in skills):
        raise SchemaMismatch("'skills' must be an array of strings")
    if not isinstance(qual, str):
        raise SchemaMismatch("'qualification' must be a string")
    return OccupationDetails(clean_skills(skills), qual)

"""Synthetic KldB-style catalogue generator.

Produces German-looking job titles over a generated code hierarchy:

* every subgroup owns a few pseudo-word stems; sibling subgroups in the same
  group share a stem prefix, so they overlap lexically;
* the requirement digit selects a role noun (``-helfer`` ... ``-ingenieur``)
  and a qualification category; managerial subgroups (4th digit 9) use
  ``-leiter`` style nouns;
* titles come as compounds (``Kobratesentechniker``), adjective + noun pairs
  (``kobratesenischer Techniker``) or ``Noun für Stem`` phrases, often in both
  masculine and feminine form, and sometimes with a random modifier word;
* skills are drawn from the group's pool plus a global pool, so they point at
  the group but not at the subgroup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import OccupationRecord

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "w", "z", "br", "dr", "fl",
           "gr", "kl", "kr", "pl", "schl", "schw", "st", "str", "tr", "sp"]
_VOWELS = ["a", "e", "i", "o", "u", "ei", "au", "ä", "ö", "ü"]
_CODAS = ["", "", "n", "l", "r", "s", "t", "m", "nd", "rt", "lk", "ng", "st"]

# (masculine, feminine) role nouns by requirement level
ROLES = {
    1: [("helfer", "helferin"), ("arbeiter", "arbeiterin")],
    2: [("monteur", "monteurin"), ("mechaniker", "mechanikerin"), ("assistent", "assistentin")],
    3: [("techniker", "technikerin"), ("spezialist", "spezialistin"), ("fachwirt", "fachwirtin")],
    4: [("ingenieur", "ingenieurin"), ("referent", "referentin"), ("wissenschaftler", "wissenschaftlerin")],
}
MANAGER_ROLES = {
    3: [("leiter", "leiterin"), ("aufseher", "aufseherin")],
    4: [("leiter", "leiterin"), ("manager", "managerin")],
}

QUALIFICATIONS = {
    1: ["Helfer-/Anlerntätigkeiten"],
    2: ["Duale Ausbildung", "Tätigkeiten nach Ausbildung", "Berufsfachschulausbildungen (rechtlich geregelt)"],
    3: ["Andere Weiterbildungen", "Tätigkeiten nach Weiterbildung", "Techniker", "Studienfächer/-gänge"],
    4: ["Tätigkeiten nach Studium", "Studienfächer/-gänge", "Weiterbildungen (bedingen Hochschulstudium)"],
}
DQR_BY_REQ = {1: 2, 2: 4, 3: 6, 4: 7}


def _word(rng: np.random.Generator, syllables: int) -> str:
    parts = []
    for _ in range(syllables):
        parts.append(_ONSETS[rng.integers(len(_ONSETS))])
        parts.append(_VOWELS[rng.integers(len(_VOWELS))])
        parts.append(_CODAS[rng.integers(len(_CODAS))])
    return "".join(parts)


@dataclass
class SyntheticConfig:
    n_areas: int = 5
    main_groups_per_area: int = 2
    groups_per_main: int = 2
    subgroups_per_group: int = 2
    managerial_share: float = 0.5
    titles_per_type: int = 22
    stems_per_subgroup: int = 4
    modifier_rate: float = 0.3
    sibling_modifier_rate: float = 0.3
    both_genders_rate: float = 0.5
    dqr_rate: float = 0.1
    seed: int = 0


@dataclass
class _Subgroup:
    code4: str
    stems: list[str]
    req_levels: list[int]
    managerial: bool
    skills: list[str]


def _capitalize(s: str) -> str:
    return s[:1].upper() + s[1:]


def _adjective(stem: str) -> str:
    return stem + ("ischer" if stem[-1] not in "aeiouäöü" else "scher")


def generate_catalogue(config: SyntheticConfig | None = None) -> list[OccupationRecord]:
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(cfg.seed)
    used: set[str] = set()

    def fresh(syllables: int) -> str:
        while True:
            w = _word(rng, syllables)
            if w not in used and len(w) >= 3:
                used.add(w)
                return w

    modifiers = [_capitalize(fresh(2)) for _ in range(60)]
    global_skills = [fresh(2) + " " + fresh(1) for _ in range(40)]

    area_digits = rng.choice(np.arange(1, 10), size=cfg.n_areas, replace=False)
    subgroups: list[_Subgroup] = []
    for a in sorted(area_digits):
        for m in range(1, cfg.main_groups_per_area + 1):
            for g in range(1, cfg.groups_per_main + 1):
                group_stem = fresh(1)
                group_skills = [fresh(2) + " " + fresh(2) for _ in range(8)]
                for s in range(1, cfg.subgroups_per_group + 1):
                    # siblings share the group stem prefix
                    stems = [group_stem + fresh(1) for _ in range(cfg.stems_per_subgroup)]
                    reqs = sorted(rng.choice([1, 2, 3, 4], size=2, replace=False).tolist())
                    subgroups.append(_Subgroup(f"{a}{m}{g}{s}", stems, reqs, False, group_skills))
                if rng.random() < cfg.managerial_share:
                    stems = [group_stem + fresh(1) for _ in range(cfg.stems_per_subgroup)]
                    subgroups.append(_Subgroup(f"{a}{m}{g}9", stems, [3, 4], True, group_skills))

    siblings: dict[str, list[_Subgroup]] = {}
    for sg in subgroups:
        siblings.setdefault(sg.code4[:3], []).append(sg)

    records: list[OccupationRecord] = []
    seen_terms: set[str] = set()
    for sg in subgroups:
        for req in sg.req_levels:
            kldb = f"{sg.code4}{req}"
            roles = (MANAGER_ROLES if sg.managerial else ROLES)[req]
            made = 0
            attempts = 0
            while made < cfg.titles_per_type and attempts < cfg.titles_per_type * 20:
                attempts += 1
                stem = sg.stems[rng.integers(len(sg.stems))]
                masc, fem = roles[rng.integers(len(roles))]
                form = rng.integers(3)
                variants = []
                for noun in (masc, fem):
                    if form == 0:
                        t = _capitalize(stem + noun)
                    elif form == 1:
                        t = f"{_adjective(stem)} {_capitalize(noun)}"
                    else:
                        t = f"{_capitalize(noun)} für {_capitalize(stem)}"
                    variants.append(t)
                u = rng.random()
                if u < cfg.sibling_modifier_rate:
                    # non-head modifier taken from a sibling subgroup's vocabulary
                    sib = siblings[sg.code4[:3]]
                    other = sib[rng.integers(len(sib))]
                    mod = _capitalize(other.stems[rng.integers(len(other.stems))])
                    variants = [f"{mod} {t}" for t in variants]
                elif u < cfg.sibling_modifier_rate + cfg.modifier_rate:
                    mod = modifiers[rng.integers(len(modifiers))]
                    variants = [f"{mod} {t}" for t in variants]
                if rng.random() >= cfg.both_genders_rate:
                    variants = [variants[rng.integers(2)]]
                qual = QUALIFICATIONS[req][rng.integers(len(QUALIFICATIONS[req]))]
                n_skills = int(rng.integers(0, 4))
                pool = sg.skills + global_skills[:10]
                skills = [pool[i] for i in rng.choice(len(pool), size=n_skills, replace=False)]
                dqr = DQR_BY_REQ[req] if rng.random() < cfg.dqr_rate else None
                for t in variants:
                    if t in seen_terms:
                        continue
                    seen_terms.add(t)
                    records.append(OccupationRecord.create(t, kldb, qual, skills, dqr))
                    made += 1
    return records

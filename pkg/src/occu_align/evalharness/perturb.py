"""Title rewrites for robustness ablations."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Callable

# "(Reise)begleiter" is not a management noun
_MGMT_RE = re.compile(r"(?P<stem>.*?)(?<![Gg])(?P<noun>[Ll]eiter(?:/-?in|\(in\)|In|in)?)$")

# masculine suffix -> feminine suffix; longest match wins
GENDER_SUFFIXES: list[tuple[str, str]] = [
    ("eur", "eurin"),
    ("loge", "login"),
    ("ant", "antin"),
    ("ent", "entin"),
    ("ist", "istin"),
    ("wirt", "wirtin"),
    ("er", "erin"),
]

# -er words that are not person nouns
GENDER_EXCEPTIONS = frozenset(
    {"center", "computer", "container", "filter", "meter", "theater", "server", "lager", "wasser",
     "zimmer", "keller", "fenster", "messer", "papier", "bier", "feuer", "ufer",
     "personal", "assistenz", "leitung", "fachkraft", "hilfe", "kraft", "service", "management"}
)

_NEUTRAL_RE = re.compile(r"^(?P<base>.+?)(?:/-?in|\(in\)|In|\*in|:in|_in)$")


def perturb_management(title: str) -> str | None:
    """``…leiter``, ``…leiterin`` or ``…leiter/in`` head noun -> ``…leitung``."""
    tokens = title.split()
    for pos in [len(tokens) - 1, *range(len(tokens) - 1)]:
        if pos < 0:
            break
        m = _MGMT_RE.fullmatch(tokens[pos])
        if m is None:
            continue
        lead = "L" if m.group("noun")[0] == "L" else "l"
        tokens[pos] = m.group("stem") + lead + "eitung"
        return " ".join(tokens)
    return None


def _gender_forms(word: str) -> tuple[str, str] | None:
    m = _NEUTRAL_RE.match(word)
    if m:
        base = m.group("base")
        for masc, fem in GENDER_SUFFIXES:
            if base.endswith(masc):
                return base, base[: -len(masc)] + fem
        return None
    if word.lower() in GENDER_EXCEPTIONS:
        return None
    for masc, fem in GENDER_SUFFIXES:
        if word.endswith(fem) and len(word) > len(fem):
            return word[: -len(fem)] + masc, word
    for masc, fem in GENDER_SUFFIXES:
        if word.endswith(masc) and len(word) > len(masc):
            return word, word[: -len(masc)] + fem
    return None


def perturb_gender(title: str) -> list[str]:
    """Masculine and feminine variants of the head noun (last inflectable
    capitalised token); ``[]`` when no suffix rule applies."""
    tokens = title.split()
    for pos in range(len(tokens) - 1, -1, -1):
        tok = tokens[pos]
        if not tok[:1].isupper():
            continue
        forms = _gender_forms(tok)
        if forms is None:
            continue
        masc, fem = forms
        return [" ".join([*tokens[:pos], masc, *tokens[pos + 1 :]]),
                " ".join([*tokens[:pos], fem, *tokens[pos + 1 :]])]
    return []


def perturb_word_order(title: str) -> str | None:
    tokens = title.split()
    if len(tokens) != 2 or tokens[0] == tokens[1]:
        return None
    return f"{tokens[1]} {tokens[0]}"


class Perturbation(str, enum.Enum):
    ManagementNoun = "management"
    GenderVariant = "gender"
    WordOrderReversal = "word-order"
    Identity = "identity"

    def variants(self, title: str) -> list[str]:
        """Rewritten titles to evaluate (empty when not applicable)."""
        if self is Perturbation.Identity:
            return [title]
        if self is Perturbation.GenderVariant:
            return perturb_gender(title)
        fn: Callable[[str], str | None] = (
            perturb_management if self is Perturbation.ManagementNoun else perturb_word_order
        )
        out = fn(title)
        return [] if out is None else [out]

    def applies(self, title: str) -> bool:
        return bool(self.variants(title))

"""Render catalog documents and opportunities into deterministic text prompts."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum

from .catalog import ContentDoc, Opportunity
from .errors import EmptyPrompt, UnknownGroup

SALES_PLAY = "sales play"
SOLUTION_AREA = "solution area"
PRODUCT = "product"

# features rendered on both sides of the match, in template order
SHARED_FEATURES = (SALES_PLAY, SOLUTION_AREA, PRODUCT)

_TOKEN = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; punctuation is dropped."""
    return _TOKEN.findall(text.lower())


def stable_hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class Prompt:
    text: str
    source_id: str
    feature_set: tuple[str, ...]

    @property
    def prompt_hash(self) -> int:
        return stable_hash64(self.text)


class FeatureGroup(str, Enum):
    """Ablation groups over the shared feature set."""

    A = "A"
    B = "B"
    C = "C"
    D = "D"

    @property
    def features(self) -> frozenset[str]:
        return _GROUPS[self]


_GROUPS = {
    FeatureGroup.A: frozenset(SHARED_FEATURES),
    FeatureGroup.B: frozenset(SHARED_FEATURES) - {SALES_PLAY},
    FeatureGroup.C: frozenset(SHARED_FEATURES) - {PRODUCT},
    FeatureGroup.D: frozenset(SHARED_FEATURES) - {SOLUTION_AREA, PRODUCT},
}

DEFAULT_GROUP = FeatureGroup.A


def resolve_group(label: str | FeatureGroup) -> frozenset[str]:
    try:
        return FeatureGroup(label).features
    except ValueError:
        raise UnknownGroup(f"unknown feature group {label!r}") from None


def _render(source_id: str, segments: list[tuple[str, str | None]]) -> Prompt:
    parts = []
    names = []
    for name, value in segments:
        if value:
            parts.append(f"{name}: {value}.")
            names.append(name)
    if not parts:
        raise EmptyPrompt(f"nothing to render for {source_id!r}")
    return Prompt(text=" ".join(parts), source_id=source_id, feature_set=tuple(names))


def build_content_prompt(doc: ContentDoc) -> Prompt:
    return _render(
        doc.content_id,
        [
            ("name", doc.name),
            ("description", doc.description),
            (SOLUTION_AREA, doc.solution_area),
            (PRODUCT, doc.product),
        ],
    )


def build_opportunity_prompt(
    opp: Opportunity, group: str | FeatureGroup = DEFAULT_GROUP
) -> Prompt:
    """Opportunity name, the group's shared features, then segment and area name.

    Values keep their original casing; only filters use normalized values.
    """
    keep = resolve_group(group)
    shared = {
        SALES_PLAY: opp.sales_play,
        SOLUTION_AREA: opp.solution_area,
        PRODUCT: opp.primary_product,
    }
    segments: list[tuple[str, str | None]] = [("opportunity name", opp.opportunity_name)]
    segments += [(name, shared[name]) for name in SHARED_FEATURES if name in keep]
    segments += [("segment", opp.segment), ("area name", opp.area_name)]
    return _render(opp.opportunity_id, segments)

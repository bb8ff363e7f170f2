"""Dataset ingestion, ideology label mapping, and subset slicing.

Datasets are JSONL files with one content item per line:

    {"id": "abc", "title": "...", "source": "...", "description": "...",
     "label": "liberal"|"neutral"|"conservative"|null, "score": -0.5,
     "flags": {"political": true, "news_channel": false}}

Items carry either a gold label, a raw score on the dataset's native
scale (converted through a :class:`LabelMapping`), or both.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional


class DatasetError(ValueError):
    """Raised when a dataset file or record violates the input contract."""


class Ideology(enum.IntEnum):
    """Three-way ideology label.

    The integer values define the total order Liberal < Neutral <
    Conservative used for deterministic tie-breaking and for confusion
    matrix indexing.
    """

    LIBERAL = 0
    NEUTRAL = 1
    CONSERVATIVE = 2

    @classmethod
    def from_string(cls, value: str) -> "Ideology":
        try:
            return cls[value.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown ideology label: {value!r}") from None

    @property
    def wire(self) -> str:
        """Lowercase form used in JSON artifacts ("liberal")."""
        return self.name.lower()

    @property
    def display(self) -> str:
        """Capitalized form used in prompts ("Liberal")."""
        return self.name.capitalize()


IDEOLOGIES = (Ideology.LIBERAL, Ideology.NEUTRAL, Ideology.CONSERVATIVE)


@dataclass
class ContentItem:
    """One classifiable unit: a video, news article, or post."""

    id: str
    title: str
    source: Optional[str] = None
    description: Optional[str] = None
    label: Optional[Ideology] = None
    raw_score: Optional[float] = None
    political: Optional[bool] = None
    news_channel: Optional[bool] = None

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "source": self.source,
            "description": self.description,
            "label": self.label.wire if self.label is not None else None,
            "score": self.raw_score,
            "flags": {"political": self.political, "news_channel": self.news_channel},
        }


@dataclass(frozen=True)
class LabelMapping:
    """Maps a dataset's native score scale onto the three labels.

    ``direct`` datasets ship labels instead of scores and ignore the
    cutoffs entirely.
    """

    scheme: str
    lo_cutoff: float = 0.0
    hi_cutoff: float = 0.0

    SCHEMES = ("youtube_slant", "adfontes", "direct")

    def __post_init__(self) -> None:
        if self.scheme not in self.SCHEMES:
            raise ValueError(f"unknown label scheme: {self.scheme!r}")
        if self.scheme != "direct" and not self.lo_cutoff < self.hi_cutoff:
            raise ValueError("lo_cutoff must be strictly below hi_cutoff")

    @classmethod
    def youtube_slant(cls) -> "LabelMapping":
        return cls("youtube_slant", -0.33, 0.33)

    @classmethod
    def adfontes(cls) -> "LabelMapping":
        return cls("adfontes", -14.0, 14.0)

    @classmethod
    def direct(cls) -> "LabelMapping":
        return cls("direct")

    @classmethod
    def for_scheme(cls, scheme: str) -> "LabelMapping":
        if scheme == "youtube_slant":
            return cls.youtube_slant()
        if scheme == "adfontes":
            return cls.adfontes()
        if scheme == "direct":
            return cls.direct()
        raise ValueError(f"unknown label scheme: {scheme!r}")


def map_label(raw_score: float, mapping: LabelMapping) -> Ideology:
    """Convert a raw score to a label.

    Cutoffs are inclusive toward the extreme labels: score <= lo_cutoff
    is Liberal and score >= hi_cutoff is Conservative, so an item sitting
    exactly on a cutoff classifies stably.
    """
    if mapping.scheme == "direct":
        raise ValueError("direct scheme carries labels; map_label does not apply")
    if not math.isfinite(raw_score):
        raise ValueError(f"raw score must be finite, got {raw_score!r}")
    if raw_score <= mapping.lo_cutoff:
        return Ideology.LIBERAL
    if raw_score >= mapping.hi_cutoff:
        return Ideology.CONSERVATIVE
    return Ideology.NEUTRAL


def _parse_item(obj: dict, lineno: int, schema: LabelMapping) -> ContentItem:
    if not isinstance(obj, dict):
        raise DatasetError(f"line {lineno}: expected a JSON object")
    item_id = obj.get("id")
    if not isinstance(item_id, str) or not item_id:
        raise DatasetError(f"line {lineno}: missing or empty id")
    title = obj.get("title")
    if not isinstance(title, str) or not title.strip():
        raise DatasetError(f"line {lineno}: missing title for id {item_id!r}")

    label = None
    if obj.get("label") is not None:
        try:
            label = Ideology.from_string(obj["label"])
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None

    score = obj.get("score")
    if score is not None:
        if not isinstance(score, (int, float)):
            raise DatasetError(f"line {lineno}: score must be numeric")
        score = float(score)

    if label is None and score is None:
        raise DatasetError(f"line {lineno}: item {item_id!r} has neither label nor score")
    if label is None and score is not None and schema.scheme != "direct":
        try:
            label = map_label(score, schema)
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None

    flags = obj.get("flags") or {}
    if not isinstance(flags, dict):
        raise DatasetError(f"line {lineno}: flags must be an object or null")

    return ContentItem(
        id=item_id,
        title=title,
        source=obj.get("source"),
        description=obj.get("description"),
        label=label,
        raw_score=score,
        political=flags.get("political"),
        news_channel=flags.get("news_channel"),
    )


def load_dataset(path, schema: LabelMapping) -> list[ContentItem]:
    """Load a JSONL dataset, labeling scored items through ``schema``.

    Order-preserving and deterministic. Malformed lines, duplicate ids,
    and missing titles abort with the offending line number.
    """
    items: list[ContentItem] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            item = _parse_item(obj, lineno, schema)
            if item.id in seen:
                raise DatasetError(
                    f"line {lineno}: duplicate id {item.id!r} (first seen at line {seen[item.id]})"
                )
            seen[item.id] = lineno
            items.append(item)
    return items


def write_dataset(items: Iterable[ContentItem], path) -> None:
    """Write items as dataset JSONL (inverse of :func:`load_dataset`)."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_json_dict(), sort_keys=True) + "\n")


class FilterResult(NamedTuple):
    items: list[ContentItem]
    skipped: int


def filter_subset(
    items: Iterable[ContentItem],
    political: Optional[bool] = None,
    news_channel: Optional[bool] = None,
) -> FilterResult:
    """Keep items matching every non-null flag criterion.

    Items lacking a required flag are excluded and counted in the skip
    tally rather than raising: real datasets are partially annotated.
    """
    kept: list[ContentItem] = []
    skipped = 0
    for item in items:
        missing = (political is not None and item.political is None) or (
            news_channel is not None and item.news_channel is None
        )
        if missing:
            skipped += 1
            continue
        if political is not None and item.political != political:
            continue
        if news_channel is not None and item.news_channel != news_channel:
            continue
        kept.append(item)
    return FilterResult(kept, skipped)


def normalize_source(name: str) -> str:
    """Lowercase, trim, and collapse internal whitespace."""
    return re.sub(r"\s+", " ", name.strip()).lower()


@dataclass
class SourceIdeologyMap:
    """Source name -> ideology lookup with case-insensitive matching.

    Unknown sources resolve to None, never to a default ideology.
    """

    entries: dict[str, Ideology] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "SourceIdeologyMap":
        entries = {}
        for name, value in raw.items():
            entries[normalize_source(name)] = Ideology.from_string(value)
        return cls(entries)

    @classmethod
    def load(cls, path) -> "SourceIdeologyMap":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise DatasetError(f"{path}: source map must be a JSON object")
        return cls.from_dict(raw)

    def lookup(self, source: Optional[str]) -> Optional[Ideology]:
        if source is None:
            return None
        return self.entries.get(normalize_source(source))


MISLEADING_SIDES = ("liberal_sources", "conservative_sources")


def misleading_slice(
    items: Iterable[ContentItem],
    src_map: SourceIdeologyMap,
    side: str,
) -> list[ContentItem]:
    """Items whose gold label conflicts with their source's known ideology.

    ``liberal_sources`` selects neutral/conservative items published by
    liberal sources; ``conservative_sources`` is symmetric. Items with
    unknown or missing sources or labels are skipped.
    """
    if side not in MISLEADING_SIDES:
        raise ValueError(f"side must be one of {MISLEADING_SIDES}, got {side!r}")
    source_side = Ideology.LIBERAL if side == "liberal_sources" else Ideology.CONSERVATIVE
    out = []
    for item in items:
        if item.label is None:
            continue
        src = src_map.lookup(item.source)
        if src != source_side:
            continue
        if item.label != source_side:
            out.append(item)
    return out

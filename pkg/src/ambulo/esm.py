"""Survey merging, response rates and infrastructure-report text processing."""

from __future__ import annotations

import csv
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .ingest import SURVEY_TYPES, EsmResponse
from .timeutil import local_day_index

log = logging.getLogger(__name__)

CATEGORIES = ("sidewalk", "crosswalk", "uneven_surface", "trash_debris", "other")

DEFAULT_KEYWORDS = {
    "sidewalk": ["sidewalk", "pavement", "footpath", "pole"],
    "crosswalk": ["crosswalk", "crossing", "intersection", "traffic light", "cars"],
    "uneven_surface": ["uneven", "crack", "pothole", "bump", "brick"],
    "trash_debris": ["trash", "litter", "debris", "garbage"],
}

DEFAULT_STOPLIST = ["none", "no", "nope", "n/a", "na", "nothing", "i didn't see any issue", "i didnt see any issue"]
NEGATIONS = frozenset({"no", "none", "nope", "nothing", "na", "nah", "not"})

_APOS = re.compile(r"['’`]")
_NON_ALNUM = re.compile(r"[^0-9a-z]+")


def normalize(text: str) -> str:
    """Lowercase, drop apostrophes, turn other punctuation into spaces, collapse whitespace."""
    t = _APOS.sub("", (text or "").lower())
    return " ".join(_NON_ALNUM.sub(" ", t).split())


def tokenize(text: str) -> list[str]:
    return normalize(text).split()


def load_stopwords(path=None) -> frozenset:
    if path is None:
        raw = resources.files("ambulo").joinpath("data/stopwords_en.txt").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip() for w in raw.splitlines() if w.strip() and not w.startswith("#"))


# ------------------------------------------------------------------ merge and rates


def merge_surveys(responses: list[EsmResponse]) -> tuple[dict, dict]:
    """Group by participant (sorted by time), excluding entries with an empty payload.

    Returns (dataset, excluded counts per (participant, survey_type)). A
    participant whose every response is excluded still gets an empty group.
    """
    dataset: dict = {}
    excluded: Counter = Counter()
    for r in sorted(responses, key=lambda r: (r.participant_id, r.t, r.survey_type)):
        group = dataset.setdefault(r.participant_id, [])
        if r.payload_empty():
            excluded[(r.participant_id, r.survey_type)] += 1
            continue
        group.append(r)
    return dataset, dict(excluded)


@dataclass
class ResponseRate:
    participant_id: str
    survey_type: str
    answered: int
    expected: int
    rate: float
    capped: bool = False


def response_rates(dataset: dict, study_days: int = 14, survey_types=SURVEY_TYPES) -> list[ResponseRate]:
    """answered / study_days per participant and survey type, capped at 1."""
    if study_days < 1:
        raise ValueError("study_days must be >= 1")
    out = []
    for pid in sorted(dataset):
        counts = Counter(r.survey_type for r in dataset[pid])
        for st in survey_types:
            n = counts.get(st, 0)
            rate = n / study_days
            capped = rate > 1.0
            if capped:
                log.warning("%s/%s: %d responses over %d days; rate capped at 1", pid, st, n, study_days)
                rate = 1.0
            out.append(ResponseRate(pid, st, n, study_days, rate, capped))
    return out


# ------------------------------------------------------------------ infrastructure reports


def filter_neutral(text: str, stoplist=DEFAULT_STOPLIST, negations=NEGATIONS) -> bool:
    """True when the text says nothing beyond "no problem"."""
    norm = normalize(text)
    if not norm:
        return True
    if norm in {normalize(s) for s in stoplist}:
        return True
    return all(tok in negations for tok in norm.split())


@dataclass
class InfrastructureReport:
    participant_id: str
    t: int
    raw_text: str
    normalized_text: str
    category: Optional[str]  # None for neutral responses
    matched_keywords: list = field(default_factory=list)


def categorize(text: str, keyword_map: Optional[dict] = None) -> tuple[str, list[str]]:
    """(category, matched keywords). Map order is priority order; first matching category wins."""
    kmap = DEFAULT_KEYWORDS if keyword_map is None else keyword_map
    norm = normalize(text)
    matched, category = [], None
    for cat, words in kmap.items():
        hits = [w for w in words if normalize(w) and normalize(w) in norm]
        if hits and category is None:
            category = cat
        matched.extend(hits)
    return (category or "other"), matched


def build_reports(dataset: dict, stoplist=DEFAULT_STOPLIST, keyword_map: Optional[dict] = None) -> list[InfrastructureReport]:
    out = []
    for pid in sorted(dataset):
        for r in dataset[pid]:
            if not r.infra_text:
                continue
            norm = normalize(r.infra_text)
            if filter_neutral(r.infra_text, stoplist):
                out.append(InfrastructureReport(pid, r.t, r.infra_text, norm, None, []))
            else:
                cat, hits = categorize(r.infra_text, keyword_map)
                out.append(InfrastructureReport(pid, r.t, r.infra_text, norm, cat, hits))
    return out


def category_counts(reports: list[InfrastructureReport]) -> dict:
    counts = {c: 0 for c in CATEGORIES}
    for r in reports:
        if r.category is not None:
            counts[r.category] += 1
    return counts


def word_frequencies(texts, stopwords=None, top_n: int = 20) -> list[tuple[str, int]]:
    """Most frequent tokens; ties broken lexicographically."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    stop = load_stopwords() if stopwords is None else frozenset(stopwords)
    counts: Counter = Counter()
    for text in texts:
        counts.update(tok for tok in tokenize(text) if len(tok) >= 2 and tok not in stop)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]


def problem_day_counts(reports: list[InfrastructureReport], tz_offsets: dict | int = 0) -> dict:
    """Per participant, number of distinct local days with at least one non-neutral report."""
    days: dict = {}
    for r in reports:
        days.setdefault(r.participant_id, set())
        if r.category is None:
            continue
        off = tz_offsets if isinstance(tz_offsets, int) else tz_offsets.get(r.participant_id, 0)
        days[r.participant_id].add(int(local_day_index(np.int64(r.t), off)))
    return {pid: len(d) for pid, d in sorted(days.items())}


# ------------------------------------------------------------------ writers


def write_reports(reports: list[InfrastructureReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", "t_utc_ms", "category", "matched_keywords", "raw_text"])
        for r in reports:
            w.writerow([r.participant_id, r.t, r.category or "neutral", ";".join(r.matched_keywords), r.raw_text])


def write_frequencies(freqs: list[tuple[str, int]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "word", "count"])
        for i, (word, n) in enumerate(freqs, start=1):
            w.writerow([i, word, n])


def write_rates(rates: list[ResponseRate], path, fmt=repr) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", "survey_type", "answered", "expected", "rate"])
        for r in rates:
            w.writerow([r.participant_id, r.survey_type, r.answered, r.expected, fmt(r.rate)])

"""Keyword matching and the per-summary metric suite.

A summary is scored against the ground truth of the form it summarizes:

* severity score  S = K_s / K_p
* recall          K_s / (K_p + K_fn), with K_fn = K_p - K_s
* Cohen's kappa   over the bank's keyword groups, one binary label per group
  (ground truth severe vs. mentioned in the summary)

K_p counts severe groups in the form and K_s those the summary mentions.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import NamedTuple

from .cohort import GroundTruth, PatientForm
from .question_bank import KeywordGroup, QuestionBank


@dataclass
class MatchResult:
    matched_groups: set[str] = field(default_factory=set)
    spans: dict[str, list[tuple[str, int]]] = field(default_factory=dict)


class SeverityResult(NamedTuple):
    value: float
    vacuous: bool


class KappaResult(NamedTuple):
    value: float
    degenerate: bool


@dataclass(frozen=True)
class Counts:
    k_p: int
    k_s: int
    k_fn: int
    k_fp: int
    true_negatives: int


@dataclass
class MetricRecord:
    form_id: str
    model_id: str
    severity_score: float
    severity_vacuous: bool
    recall: float
    kappa: float
    kappa_degenerate: bool
    judge_grade: float | None
    treatments_mentioned: bool
    free_text_covered: bool | None
    counts: Counts

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> MetricRecord:
        data = dict(data)
        data["counts"] = Counts(**data["counts"])
        return cls(**data)

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=False)

    @classmethod
    def from_line(cls, line: str) -> MetricRecord:
        return cls.from_dict(json.loads(line))


@lru_cache(maxsize=1024)
def _pattern_regex(pattern: str) -> re.Pattern:
    tokens = [re.escape(t) for t in pattern.split()]
    # Whole words only; the final token may carry a plural "s".
    return re.compile(r"(?<!\w)" + r"\s+".join(tokens) + r"s?(?!\w)", re.IGNORECASE)


def match_keywords(summary: str, groups) -> MatchResult:
    """Find which keyword groups the summary mentions."""
    result = MatchResult()
    for group in groups:
        hits = []
        for pattern in group.patterns:
            for m in _pattern_regex(pattern).finditer(summary):
                hits.append((pattern, m.start()))
        if hits:
            hits.sort(key=lambda h: (h[1], h[0]))
            result.matched_groups.add(group.group_id)
            result.spans[group.group_id] = hits
    return result


def contingency(truth: GroundTruth, match: MatchResult, group_ids) -> Counts:
    universe = set(group_ids)
    severe = truth.severe_groups & universe
    mentioned = match.matched_groups & universe
    k_s = len(severe & mentioned)
    k_fp = len(mentioned - severe)
    return Counts(
        k_p=len(severe),
        k_s=k_s,
        k_fn=len(severe) - k_s,
        k_fp=k_fp,
        true_negatives=len(universe - severe - mentioned),
    )


def severity_score(truth: GroundTruth, match: MatchResult) -> SeverityResult:
    k_p = len(truth.severe_groups)
    if k_p == 0:
        return SeverityResult(1.0, True)
    k_s = len(truth.severe_groups & match.matched_groups)
    return SeverityResult(k_s / k_p, False)


def recall_score(truth: GroundTruth, match: MatchResult, standard: bool = False) -> float:
    """Recall as K_s / (K_p + K_fn).

    ``standard=True`` gives the textbook K_s / K_p instead. The default
    denominator counts missed groups twice, so it is at most the severity score.
    """
    k_p = len(truth.severe_groups)
    k_s = len(truth.severe_groups & match.matched_groups)
    k_fn = k_p - k_s
    denom = k_p if standard else k_p + k_fn
    return k_s / denom if denom else 0.0


def kappa_from_counts(tp: int, tn: int, fp: int, fn: int) -> KappaResult:
    n = tp + tn + fp + fn
    if n <= 0:
        raise ValueError("contingency table is empty")
    # Integer numerators keep the P_e == 1 test exact.
    agree = tp + tn
    chance = (tp + fn) * (tp + fp) + (tn + fp) * (tn + fn)
    if chance == n * n:
        return KappaResult(1.0 if agree == n else -1.0, True)
    p_o = agree / n
    p_e = chance / (n * n)
    return KappaResult((p_o - p_e) / (1.0 - p_e), False)


def kappa_score(truth: GroundTruth, match: MatchResult, total_groups: int) -> KappaResult:
    """Cohen's kappa between ground-truth severity and mention, per keyword group.

    Groups neither severe nor mentioned are true negatives; the bank's group
    count fixes the table size.
    """
    if total_groups < 1:
        raise ValueError("total_groups must be >= 1")
    tp = len(truth.severe_groups & match.matched_groups)
    fn = len(truth.severe_groups) - tp
    fp = len(match.matched_groups - truth.severe_groups)
    tn = total_groups - tp - fn - fp
    if tn < 0:
        raise ValueError("groups outside the bank were labelled")
    return kappa_from_counts(tp, tn, fp, fn)


def _number_regex(n: int) -> re.Pattern:
    return re.compile(r"(?<![\w.])" + str(n) + r"(?!\w|\.\d)")


def treatments_mentioned(summary: str, form: PatientForm) -> bool:
    return _number_regex(form.treatments).search(summary) is not None


def free_text_covered(summary: str, truth: GroundTruth) -> bool | None:
    """At least half (rounded up) of the free-text tokens appear; None if there are none."""
    tokens = truth.free_text_tokens
    if not tokens:
        return None
    found = sum(
        1
        for tok in tokens
        if re.search(r"(?<!\w)" + re.escape(tok) + r"(?!\w)", summary, re.IGNORECASE)
    )
    return found >= math.ceil(len(tokens) / 2)


def score_summary(
    bank: QuestionBank,
    form: PatientForm,
    truth: GroundTruth,
    summary: str,
    judge_grade: float | None = None,
    model_id: str = "",
    standard_recall: bool = False,
) -> MetricRecord:
    groups: tuple[KeywordGroup, ...] = bank.groups
    match = match_keywords(summary, groups)
    severity = severity_score(truth, match)
    kappa = kappa_score(truth, match, len(groups))
    return MetricRecord(
        form_id=form.form_id,
        model_id=model_id,
        severity_score=severity.value,
        severity_vacuous=severity.vacuous,
        recall=recall_score(truth, match, standard=standard_recall),
        kappa=kappa.value,
        kappa_degenerate=kappa.degenerate,
        judge_grade=judge_grade,
        treatments_mentioned=treatments_mentioned(summary, form),
        free_text_covered=free_text_covered(summary, truth),
        counts=contingency(truth, match, bank.group_ids),
    )

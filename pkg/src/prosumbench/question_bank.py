"""Keyword-annotated PRO-CTCAE question bank and answer severity scales."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

DEFAULT_BANK_NAME = "pro_ctcae_prostate.bank"

SEVERITY_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)


class BankError(ValueError):
    """Raised when a bank document is malformed or fails validation."""


class UnknownAnswerError(ValueError):
    """Raised when an answer is not among a question's options."""

    def __init__(self, question_id: str, answer: str):
        super().__init__(f"question {question_id!r}: unknown answer {answer!r}")
        self.question_id = question_id
        self.answer = answer


class ScaleKind(str, enum.Enum):
    YES_NO = "yes_no"
    SEVERITY5 = "severity5"
    INTERFERENCE5 = "interference5"
    FREQUENCY5 = "frequency5"
    OPEN_NUMERIC = "open_numeric"
    OPEN_TEXT = "open_text"
    LANGUAGE_CHOICE = "language_choice"

    @property
    def scored(self) -> bool:
        return self in SCALE_SCORES


def normalize(text: str) -> str:
    """Lowercase and collapse runs of whitespace."""
    return " ".join(text.split()).lower()


# Canonical options, left to right, with their scores.
SCALE_SCORES: dict[ScaleKind, dict[str, float]] = {
    ScaleKind.YES_NO: {"no": 0.0, "yes": 1.0},
    ScaleKind.SEVERITY5: dict(
        zip(["none", "mild", "moderate", "severe", "very severe"], SEVERITY_LEVELS)
    ),
    ScaleKind.INTERFERENCE5: dict(
        zip(["not at all", "a little bit", "somewhat", "quite a bit", "very much"], SEVERITY_LEVELS)
    ),
    ScaleKind.FREQUENCY5: dict(
        zip(["never", "rarely", "occasionally", "frequently", "almost constantly"], SEVERITY_LEVELS)
    ),
}

# Options that appear in the source questionnaire but not on the canonical scale.
EXTRA_OPTION_SCORES: dict[ScaleKind, dict[str, float]] = {
    ScaleKind.SEVERITY5: {"not applicable": 0.0},
    ScaleKind.FREQUENCY5: {"very much": 0.75},
}


@dataclass(frozen=True)
class KeywordGroup:
    group_id: str
    display_name: str
    patterns: tuple[str, ...]


@dataclass(frozen=True)
class Question:
    question_id: str
    text: str
    scale: ScaleKind
    options: tuple[str, ...] = ()
    group: KeywordGroup | None = None

    @property
    def closed(self) -> bool:
        return bool(self.options)


@dataclass(frozen=True)
class QuestionBank:
    questions: tuple[Question, ...]
    groups: tuple[KeywordGroup, ...]
    _by_id: dict[str, Question] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {q.question_id: q for q in self.questions})

    def question(self, question_id: str) -> Question:
        return self._by_id[question_id]

    def group(self, group_id: str) -> KeywordGroup:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(group_id)

    @property
    def group_ids(self) -> list[str]:
        return [g.group_id for g in self.groups]

    @property
    def scored_questions(self) -> list[Question]:
        return [q for q in self.questions if q.scale.scored]

    def questions_in_group(self, group_id: str) -> list[Question]:
        return [q for q in self.questions if q.group and q.group.group_id == group_id]

    def first_of_kind(self, kind: ScaleKind) -> Question | None:
        return next((q for q in self.questions if q.scale is kind), None)


def scale_score(question: Question, answer: str) -> float | None:
    """Convert an answer to its severity score, or None for unscored questions."""
    if not question.scale.scored:
        return None
    key = normalize(answer)
    allowed = {normalize(o) for o in question.options}
    if key not in allowed:
        raise UnknownAnswerError(question.question_id, answer)
    scores = SCALE_SCORES[question.scale]
    if key in scores:
        return scores[key]
    return EXTRA_OPTION_SCORES[question.scale][key]


def _validate_options(question_id: str, scale: ScaleKind, options: list[str]) -> None:
    if scale in (ScaleKind.OPEN_NUMERIC, ScaleKind.OPEN_TEXT):
        if options:
            raise BankError(f"question {question_id!r}: open question must not list options")
        return
    if scale is ScaleKind.LANGUAGE_CHOICE:
        if not options:
            raise BankError(f"question {question_id!r}: language choice needs options")
        return
    keys = [normalize(o) for o in options]
    if len(set(keys)) != len(keys):
        raise BankError(f"question {question_id!r}: duplicate options")
    canonical = list(SCALE_SCORES[scale])
    extras = EXTRA_OPTION_SCORES.get(scale, {})
    core = [k for k in keys if k not in extras]
    if len(core) != len(canonical):
        raise BankError(
            f"question {question_id!r}: {scale.value} expects {len(canonical)} options, "
            f"got {len(core)}"
        )
    if sorted(core) != sorted(canonical):
        raise BankError(
            f"question {question_id!r}: options {options} do not match the {scale.value} scale"
        )


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise BankError(f"{where}: missing field {key!r}")
    return entry[key]


def parse_bank(data: object) -> QuestionBank:
    """Build a validated bank from an already-parsed document."""
    if not isinstance(data, dict):
        raise BankError("bank document must be a mapping with 'questions' and 'groups'")
    raw_questions = data.get("questions") or []
    raw_groups = data.get("groups") or []
    if not raw_questions:
        raise BankError("empty bank")

    groups: dict[str, KeywordGroup] = {}
    for i, entry in enumerate(raw_groups):
        where = f"group #{i}"
        if not isinstance(entry, dict):
            raise BankError(f"{where}: expected a mapping")
        gid = str(_require(entry, "group_id", where))
        where = f"group {gid!r}"
        if gid in groups:
            raise BankError(f"{where}: duplicate group_id")
        patterns = tuple(normalize(str(p)) for p in _require(entry, "patterns", where) or [])
        if not patterns:
            raise BankError(f"{where}: patterns must be non-empty")
        if any(not p for p in patterns):
            raise BankError(f"{where}: empty pattern")
        display = str(entry.get("display_name") or gid)
        groups[gid] = KeywordGroup(gid, display, patterns)

    questions: list[Question] = []
    seen: set[str] = set()
    used_groups: set[str] = set()
    for i, entry in enumerate(raw_questions):
        where = f"question #{i}"
        if not isinstance(entry, dict):
            raise BankError(f"{where}: expected a mapping")
        qid = str(_require(entry, "question_id", where))
        where = f"question {qid!r}"
        if qid in seen:
            raise BankError(f"{where}: duplicate question_id")
        seen.add(qid)
        raw_scale = _require(entry, "scale", where)
        try:
            scale = ScaleKind(raw_scale)
        except ValueError:
            raise BankError(f"{where}: unknown scale kind {raw_scale!r}") from None
        options = [str(o) for o in entry.get("options") or []]
        _validate_options(qid, scale, options)
        group = None
        gid = entry.get("group_id")
        if gid is not None:
            if str(gid) not in groups:
                raise BankError(f"{where}: unknown group_id {gid!r}")
            group = groups[str(gid)]
            used_groups.add(group.group_id)
        text = str(_require(entry, "text", where))
        questions.append(Question(qid, text, scale, tuple(options), group))

    orphans = [g for g in groups if g not in used_groups]
    if orphans:
        raise BankError(f"groups not referenced by any question: {', '.join(orphans)}")
    return QuestionBank(tuple(questions), tuple(groups.values()))


def load_bank(source: str) -> QuestionBank:
    """Parse bank-format text (YAML) into a validated QuestionBank."""
    try:
        data = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise BankError(f"malformed bank document: {exc}") from exc
    if data is None:
        raise BankError("empty bank")
    return parse_bank(data)


def load_bank_file(path: str | Path) -> QuestionBank:
    return load_bank(Path(path).read_text(encoding="utf-8"))


def default_bank_text() -> str:
    return resources.files("prosumbench.banks").joinpath(DEFAULT_BANK_NAME).read_text("utf-8")


def default_bank() -> QuestionBank:
    return load_bank(default_bank_text())


def dump_bank(bank: QuestionBank) -> str:
    """Serialize a bank back to bank-format text."""
    questions = []
    for q in bank.questions:
        entry: dict = {
            "question_id": q.question_id,
            "text": q.text,
            "scale": q.scale.value,
            "options": list(q.options),
        }
        if q.group is not None:
            entry["group_id"] = q.group.group_id
        questions.append(entry)
    groups = [
        {"group_id": g.group_id, "display_name": g.display_name, "patterns": list(g.patterns)}
        for g in bank.groups
    ]
    return yaml.safe_dump(
        {"questions": questions, "groups": groups}, sort_keys=False, allow_unicode=True
    )

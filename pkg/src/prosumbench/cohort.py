"""Seeded synthetic patient forms and their ground truth."""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from dataclasses import dataclass, field

from .question_bank import (
    EXTRA_OPTION_SCORES,
    SCALE_SCORES,
    QuestionBank,
    ScaleKind,
    UnknownAnswerError,
    normalize,
    scale_score,
)

LANGUAGES = ("English", "French", "Portuguese")
DEFAULT_THRESHOLD = 0.5

# None of these may contain a keyword-group phrase or a digit.
DEFAULT_FREE_TEXT_POOL = (
    "occasional fever",
    "mild nausea at night",
    "trouble sleeping",
    "dry mouth",
    "swollen ankles",
    "lower back ache",
    "loss of appetite",
    "itchy rash on the arm",
    "headaches in the morning",
    "constipation",
)

STOP_WORDS = frozenset(
    "a an the and or of in on at to for with from by as is are was were be been "
    "my his her their its i he she they it this that some any very also but not no "
    "have has had do does did".split()
)


class ConfigError(ValueError):
    """Raised for invalid generator or run configuration."""


@dataclass
class GeneratorConfig:
    seed: int = 42
    # scale kind value -> weights over that scale's canonical options
    option_weights: dict[str, list[float]] | None = None
    treatments_range: tuple[int, int] = (1, 40)
    free_text_pool: tuple[str, ...] = DEFAULT_FREE_TEXT_POOL
    free_text_probability: float = 0.3
    language_weights: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        self.treatments_range = tuple(self.treatments_range)  # type: ignore[assignment]
        self.free_text_pool = tuple(self.free_text_pool)
        self.language_weights = tuple(float(w) for w in self.language_weights)  # type: ignore[assignment]
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        lo, hi = self.treatments_range
        if lo < 0 or lo > hi:
            raise ConfigError(f"treatments_range {self.treatments_range} is empty or negative")
        if not 0.0 <= self.free_text_probability <= 1.0:
            raise ConfigError("free_text_probability must lie in [0, 1]")
        if self.free_text_probability > 0 and not self.free_text_pool:
            raise ConfigError("free_text_pool is empty but free_text_probability > 0")
        if len(self.language_weights) != len(LANGUAGES):
            raise ConfigError(f"language_weights needs {len(LANGUAGES)} entries")
        _check_probabilities("language_weights", self.language_weights)
        for kind, weights in (self.option_weights or {}).items():
            try:
                scale = ScaleKind(kind)
            except ValueError:
                raise ConfigError(f"option_weights: unknown scale {kind!r}") from None
            if scale not in SCALE_SCORES or len(weights) != len(SCALE_SCORES[scale]):
                raise ConfigError(f"option_weights[{kind!r}] has the wrong length")
            _check_probabilities(f"option_weights[{kind!r}]", weights)

    @classmethod
    def from_dict(cls, data: dict) -> GeneratorConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        kwargs = dict(data)
        lw = kwargs.get("language_weights")
        if isinstance(lw, dict):
            kwargs["language_weights"] = tuple(float(lw.get(lang, 0.0)) for lang in LANGUAGES)
        return cls(**kwargs)


def _check_probabilities(name: str, weights) -> None:
    if any(w < 0 for w in weights) or abs(math.fsum(weights) - 1.0) > 1e-9:
        raise ConfigError(f"{name} must be non-negative and sum to 1")


@dataclass
class PatientForm:
    form_id: str
    answers: dict[str, str]
    treatments: int
    free_text: str | None = None
    language: str = "English"

    def to_json(self) -> str:
        payload = {
            "form_id": self.form_id,
            "answers": self.answers,
            "treatments": self.treatments,
            "free_text": self.free_text,
            "language": self.language,
        }
        return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> PatientForm:
        data = json.loads(text)
        return cls(
            form_id=data["form_id"],
            answers=dict(data["answers"]),
            treatments=int(data["treatments"]),
            free_text=data.get("free_text"),
            language=data.get("language", "English"),
        )


@dataclass
class GroundTruth:
    severe_groups: frozenset[str]
    group_severity: dict[str, float]
    treatments: int
    free_text_tokens: list[str] = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD

    def to_json(self) -> str:
        payload = {
            "severe_groups": sorted(self.severe_groups),
            "group_severity": self.group_severity,
            "treatments": self.treatments,
            "free_text_tokens": self.free_text_tokens,
            "threshold": self.threshold,
        }
        return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> GroundTruth:
        data = json.loads(text)
        return cls(
            severe_groups=frozenset(data["severe_groups"]),
            group_severity={k: float(v) for k, v in data["group_severity"].items()},
            treatments=int(data["treatments"]),
            free_text_tokens=list(data["free_text_tokens"]),
            threshold=float(data["threshold"]),
        )


def form_rng(seed: int, index: int) -> random.Random:
    """Independent random stream for one form, keyed on (seed, index)."""
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))


def form_id_for(index: int) -> str:
    return f"form_{index}"


def _option_weights(config: GeneratorConfig, scale: ScaleKind, options: tuple[str, ...]):
    weights = (config.option_weights or {}).get(scale.value)
    if weights is None:
        return None
    # Configured weights cover the canonical scale; extra options are never drawn.
    by_key = dict(zip(SCALE_SCORES[scale], weights))
    extras = EXTRA_OPTION_SCORES.get(scale, {})
    return [0.0 if normalize(o) in extras else by_key[normalize(o)] for o in options]


def generate_form(bank: QuestionBank, config: GeneratorConfig, index: int) -> PatientForm:
    if index < 0:
        raise ValueError(f"index must be >= 0, got {index}")
    rng = form_rng(config.seed, index)
    answers: dict[str, str] = {}
    for q in bank.questions:
        if not q.scale.scored:
            continue
        weights = _option_weights(config, q.scale, q.options)
        answers[q.question_id] = rng.choices(q.options, weights=weights)[0]
    lo, hi = config.treatments_range
    treatments = rng.randint(lo, hi)
    free_text = None
    if rng.random() < config.free_text_probability:
        free_text = rng.choice(config.free_text_pool)
    language = rng.choices(LANGUAGES, weights=config.language_weights)[0]
    return PatientForm(form_id_for(index), answers, treatments, free_text, language)


def generate_cohort(bank: QuestionBank, config: GeneratorConfig, size: int) -> list[PatientForm]:
    return [generate_form(bank, config, i) for i in range(size)]


def salient_tokens(text: str | None) -> list[str]:
    """Lowercase content words of free text, stop words removed, first-seen order."""
    if not text:
        return []
    out: list[str] = []
    for tok in re.findall(r"\w+", text.lower()):
        if tok not in STOP_WORDS and tok not in out:
            out.append(tok)
    return out


def _answer(form: PatientForm, question_id: str) -> str:
    try:
        return form.answers[question_id]
    except KeyError:
        raise UnknownAnswerError(question_id, "<unanswered>") from None


def derive_ground_truth(
    bank: QuestionBank, form: PatientForm, threshold: float = DEFAULT_THRESHOLD
) -> GroundTruth:
    """Worst-answer severity per keyword group; severe means strictly above threshold."""
    severity: dict[str, float] = {}
    for g in bank.groups:
        scores = [
            scale_score(q, _answer(form, q.question_id))
            for q in bank.questions_in_group(g.group_id)
            if q.scale.scored
        ]
        severity[g.group_id] = max(s for s in scores if s is not None) if scores else 0.0
    severe = frozenset(gid for gid, s in severity.items() if s > threshold)
    return GroundTruth(
        severe_groups=severe,
        group_severity=severity,
        treatments=form.treatments,
        free_text_tokens=salient_tokens(form.free_text),
        threshold=threshold,
    )

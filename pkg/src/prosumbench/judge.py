"""LLM-as-a-judge grading of summaries."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .cohort import PatientForm
from .gateway import Gateway, GatewayError, MockContext, ModelConfig
from .prompt_builder import build_judge_prompt
from .question_bank import QuestionBank

log = logging.getLogger(__name__)

JUDGE_ATTEMPTS = 3


class JudgeFailure(RuntimeError):
    def __init__(self, message: str, replies: list[str]):
        super().__init__(message)
        self.replies = replies


@dataclass(frozen=True)
class JudgeOutcome:
    grade: float
    raw_reply: str
    attempts: int


_LITERAL = re.compile(r"(?<![\w.])(-?)(\d+(?:\.\d+)?|\.\d+)(?![\d])")


def parse_grade(reply: str) -> float | None:
    """First decimal literal in [0, 1], or None. Out-of-range numbers are skipped."""
    for m in _LITERAL.finditer(reply):
        value = float(m.group(1) + m.group(2))
        if 0.0 <= value <= 1.0:
            return value
    return None


def judge_summary(
    judge_config: ModelConfig,
    bank: QuestionBank,
    form: PatientForm,
    summary: str,
    *,
    gateway: Gateway,
    context: MockContext | None = None,
    attempts: int = JUDGE_ATTEMPTS,
) -> JudgeOutcome:
    """Ask the judge for a grade, re-asking on unparseable replies."""
    prompt = build_judge_prompt(bank, form, summary)
    replies: list[str] = []
    for attempt in range(1, attempts + 1):
        try:
            result = gateway.complete(judge_config, prompt, context=context, refresh=attempt > 1)
        except GatewayError as exc:
            raise JudgeFailure(f"judge {judge_config.model_id!r}: {exc}", replies) from exc
        replies.append(result.text)
        grade = parse_grade(result.text)
        if grade is not None:
            return JudgeOutcome(grade, result.text, attempt)
        log.info("judge reply %r has no grade (attempt %d/%d)", result.text, attempt, attempts)
    raise JudgeFailure(
        f"judge {judge_config.model_id!r} gave no usable grade in {attempts} attempts", replies
    )

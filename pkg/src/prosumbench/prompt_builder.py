"""Summarizer and judge prompts rendered around a serialized Q&A form."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .cohort import PatientForm
from .question_bank import Question, QuestionBank, ScaleKind

NONE_REPORTED = "None reported"

_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")
_SECTION = re.compile(r"^\[(system|user)\]$", re.MULTILINE)


@dataclass(frozen=True)
class PromptMessages:
    messages: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("prompt has no messages")
        if self.messages[0][0] != "system":
            raise ValueError("first message must have the system role")

    def to_wire(self) -> list[dict[str, str]]:
        return [{"role": role, "content": content} for role, content in self.messages]

    @property
    def system(self) -> str:
        return self.messages[0][1]

    @property
    def user(self) -> str:
        return next(c for r, c in self.messages if r == "user")


def template_text(name: str) -> str:
    return resources.files("prosumbench.prompts").joinpath(name).read_text("utf-8")


@lru_cache(maxsize=None)
def load_template(name: str) -> tuple[tuple[str, str], ...]:
    """Split a template file into (role, body) sections."""
    text = template_text(name)
    parts = _SECTION.split(text)
    if parts[0].strip():
        raise ValueError(f"{name}: text before the first section header")
    sections = []
    for role, body in zip(parts[1::2], parts[2::2]):
        sections.append((role, body.strip("\n")))
    return tuple(sections)


def example_summary() -> str:
    return template_text("example.txt").strip()


def _fill(body: str, values: dict[str, str]) -> str:
    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in values:
            raise KeyError(f"no value for placeholder {{{{{key}}}}}")
        return values[key]

    return _PLACEHOLDER.sub(sub, body)


def render(name: str, **values: str) -> PromptMessages:
    return PromptMessages(tuple((role, _fill(body, values)) for role, body in load_template(name)))


def question_line_text(question: Question) -> str:
    """Question text with its keyword group in parentheses before the final '?'."""
    if question.group is None:
        return question.text
    tag = f"({question.group.display_name.upper()})"
    if question.text.endswith("?"):
        return f"{question.text[:-1]} {tag}?"
    return f"{question.text} {tag}"


def _answer_text(question: Question, form: PatientForm) -> str:
    if question.scale is ScaleKind.OPEN_NUMERIC:
        return str(form.treatments)
    if question.scale is ScaleKind.OPEN_TEXT:
        return form.free_text if form.free_text else NONE_REPORTED
    if question.scale is ScaleKind.LANGUAGE_CHOICE:
        return form.language
    return form.answers.get(question.question_id, NONE_REPORTED)


def render_qa_block(bank: QuestionBank, form: PatientForm) -> str:
    return "\n".join(
        f"{question_line_text(q)}: {_answer_text(q, form)}" for q in bank.questions
    )


def build_summarizer_prompt(bank: QuestionBank, form: PatientForm) -> PromptMessages:
    return render(
        "summarizer.txt",
        example=example_summary(),
        qa_block=render_qa_block(bank, form),
    )


def build_judge_prompt(bank: QuestionBank, form: PatientForm, summary: str) -> PromptMessages:
    if not summary or not summary.strip():
        raise ValueError("summary to judge is empty")
    return render("judge.txt", qa_block=render_qa_block(bank, form), summary=summary)

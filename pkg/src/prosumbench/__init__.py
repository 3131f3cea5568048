"""Benchmark harness for summarizing patient-reported outcome forms with language models."""

from .cohort import GeneratorConfig, GroundTruth, PatientForm, derive_ground_truth, generate_form
from .gateway import Gateway, ModelConfig, hallucinating_oracle, lossy_oracle, perfect_oracle
from .judge import judge_summary, parse_grade
from .metrics import (
    MetricRecord,
    kappa_score,
    match_keywords,
    recall_score,
    score_summary,
    severity_score,
)
from .question_bank import QuestionBank, default_bank, load_bank, scale_score

__version__ = "0.1.0"

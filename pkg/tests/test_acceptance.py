"""Exit criteria for the harness, one test (or group of tests) per criterion.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import csv
import random
import re
import shutil
import time
from fractions import Fraction
from pathlib import Path

import httpx
import pytest

from prosumbench.cohort import GeneratorConfig, PatientForm, derive_ground_truth, generate_form
from prosumbench.gateway import Gateway, MockContext, ModelConfig
from prosumbench.judge import parse_grade
from prosumbench.metrics import (
    MatchResult,
    kappa_from_counts,
    recall_score,
    score_summary,
    severity_score,
)
from prosumbench.prompt_builder import build_summarizer_prompt
from prosumbench.question_bank import scale_score
from prosumbench.runner import RunDir, cmd_generate, cmd_report, cmd_run, cmd_score

from .helpers import truth_with
from .oracles import kappa_reference

DATA = Path(__file__).parent / "data"
TRANSCRIPT = DATA / "transcript"

# Table 1 conversion scales, transcribed by hand, plus the two out-of-scale
# options of the questionnaire ("Very much" on leakage frequency, "Not applicable"
# on skin burns).
YES_NO = {"No": 0.0, "Yes": 1.0}
SEVERITY = {"None": 0.0, "Mild": 0.25, "Moderate": 0.5, "Severe": 0.75, "Very severe": 1.0}
INTERFERENCE = {
    "Not at all": 0.0, "A little bit": 0.25, "Somewhat": 0.5, "Quite a bit": 0.75, "Very much": 1.0,
}
FREQUENCY = {
    "Never": 0.0, "Rarely": 0.25, "Occasionally": 0.5, "Frequently": 0.75, "Almost constantly": 1.0,
}
EXPECTED_SCORES = {
    "fatigue_severity": SEVERITY,
    "fatigue_interference": INTERFERENCE,
    "flatulence": YES_NO,
    "diarrhea_frequency": FREQUENCY,
    "abdominal_pain_frequency": FREQUENCY,
    "abdominal_pain_severity": SEVERITY,
    "abdominal_pain_interference": INTERFERENCE,
    "urination_pain_severity": SEVERITY,
    "urinary_urgency_frequency": FREQUENCY,
    "urinary_urgency_interference": INTERFERENCE,
    "urinary_frequency": FREQUENCY,
    "urinary_frequency_interference": INTERFERENCE,
    "urine_color_change": YES_NO,
    "leakage_frequency": {**FREQUENCY, "Very much": 0.75},
    "leakage_interference": INTERFERENCE,
    "skin_burns_severity": {**SEVERITY, "Not applicable": 0.0},
}
UNSCORED = {"treatments", "other_symptoms", "summary_language"}

WORKED_EXAMPLE = (
    "This patient, after 30 radiation treatments, reports very severe symptoms including "
    "fatigue, flatulence and diarrhea. The patient also experiences severe skin burns from "
    "radiation and leakages that impact his daily activities. He also mentioned occasional "
    "fever as an additional symptom."
)


def offline_gateway():
    def refuse(request):
        raise AssertionError(f"unexpected network call to {request.url}")

    return Gateway(client=httpx.Client(transport=httpx.MockTransport(refuse)))


def mock_records(bank, forms, config, gateway):
    out = []
    for form in forms:
        truth = derive_ground_truth(bank, form)
        reply = gateway.complete(
            config, build_summarizer_prompt(bank, form), context=MockContext(bank, form, truth)
        )
        out.append((form, truth, score_summary(bank, form, truth, reply.text, model_id=config.model_id)))
    return out


# -- 1 ----------------------------------------------------------------------


@pytest.mark.acceptance(1, "Scale fidelity")
def test_scale_fidelity(bank):
    start = time.perf_counter()
    pairs = 0
    for q in bank.questions:
        if q.question_id in UNSCORED:
            for opt in q.options or ("anything",):
                assert scale_score(q, opt) is None
            continue
        expected = EXPECTED_SCORES[q.question_id]
        assert {o.lower() for o in q.options} == {o.lower() for o in expected}, q.question_id
        for option in q.options:
            want = next(v for k, v in expected.items() if k.lower() == option.lower())
            assert scale_score(q, option) == want, (q.question_id, option)
            pairs += 1
    assert set(EXPECTED_SCORES) | UNSCORED == {q.question_id for q in bank.questions}
    assert pairs == 76
    assert time.perf_counter() - start < 1.0


# -- 2 ----------------------------------------------------------------------


@pytest.mark.acceptance(2, "Worked-example scoring")
def test_worked_example(bank, make_form):
    form = make_form(
        form_id="worked-example",
        treatments=30,
        free_text="occasional fever",
        fatigue_severity="Very severe",
        flatulence="Yes",
        diarrhea_frequency="Almost constantly",
        skin_burns_severity="Severe",
        leakage_interference="Quite a bit",
    )
    truth = derive_ground_truth(bank, form)
    assert truth.severe_groups == {"FATIGUE", "FLATULENCE", "DIARRHEA", "SKIN_BURNS", "LEAKAGE"}
    rec = score_summary(bank, form, truth, WORKED_EXAMPLE)
    assert rec.severity_score == 1.0
    assert rec.recall == 1.0
    assert rec.treatments_mentioned is True
    assert rec.free_text_covered is True


# -- 3 ----------------------------------------------------------------------


@pytest.mark.acceptance(3, "Oracle cohort")
def test_oracle_cohort(bank):
    start = time.perf_counter()
    gw = offline_gateway()
    forms = [generate_form(bank, GeneratorConfig(seed=42), i) for i in range(100)]
    results = mock_records(bank, forms, ModelConfig("perfect", "mock_perfect"), gw)
    assert len(results) == 100
    for _, truth, rec in results:
        assert rec.severity_score == 1.0
        assert rec.recall == 1.0 or rec.severity_vacuous
        k_p = len(truth.severe_groups)
        if 1 <= k_p <= 9:
            assert (rec.kappa, rec.kappa_degenerate) == (1.0, False)
        else:
            assert (rec.kappa, rec.kappa_degenerate) == (1.0, True)
    assert gw.network_calls == 0
    assert time.perf_counter() - start < 5.0


@pytest.mark.acceptance(3, "Oracle cohort")
def test_oracle_cohort_recall_on_vacuous_forms(bank, make_form):
    # With no severe groups the recall denominator is zero; recall is 0 there
    # and the record is flagged vacuous (and excluded from aggregates).
    form = make_form()
    truth = derive_ground_truth(bank, form)
    gw = offline_gateway()
    ((_, _, rec),) = mock_records(bank, [form], ModelConfig("perfect", "mock_perfect"), gw)
    assert rec.severity_vacuous and rec.severity_score == 1.0
    assert rec.kappa_degenerate and rec.kappa == 1.0


# -- 4 ----------------------------------------------------------------------


def forms_with_k_p(bank, k_p, want=8):
    found = []
    cfg = GeneratorConfig(seed=11)
    i = 0
    while len(found) < want:
        form = generate_form(bank, cfg, i)
        if len(derive_ground_truth(bank, form).severe_groups) == k_p:
            found.append(form)
        i += 1
    return found


@pytest.mark.acceptance(4, "Closed-form degradation")
def test_lossy_degradation(bank):
    forms = forms_with_k_p(bank, 4)
    lossy = ModelConfig("lossy", "mock_lossy", mock_params={"drop_count": 1, "mock_seed": 3})
    for _, truth, rec in mock_records(bank, forms, lossy, offline_gateway()):
        assert rec.severity_score == 0.75
        assert rec.recall == 0.6
        assert rec.counts.k_s == 3 and rec.counts.k_fn == 1


@pytest.mark.acceptance(4, "Closed-form degradation")
@pytest.mark.parametrize("add_count", [1, 2, 3])
def test_hallucination_degradation(bank, add_count):
    forms = [generate_form(bank, GeneratorConfig(seed=5), i) for i in range(60)]
    gw = offline_gateway()
    perfect = mock_records(bank, forms, ModelConfig("p", "mock_perfect"), gw)
    hallu = ModelConfig("h", "mock_hallucinating", mock_params={"add_count": add_count, "mock_seed": 1})
    noisy = mock_records(bank, forms, hallu, gw)
    checked = 0
    for (_, truth, base), (_, _, rec) in zip(perfect, noisy):
        if base.counts.true_negatives < add_count:
            continue
        assert rec.severity_score == base.severity_score
        assert rec.recall == base.recall
        assert rec.counts.k_fp == add_count
        assert rec.kappa < base.kappa
        checked += 1
    assert checked >= 20


# -- 5 ----------------------------------------------------------------------


@pytest.mark.acceptance(5, "Kappa oracle equivalence")
def test_kappa_oracle_equivalence():
    assert abs(kappa_from_counts(tp=3, tn=5, fp=1, fn=1).value - 0.5833333333333334) <= 1e-9
    assert kappa_reference(3, 5, 1, 1) == Fraction(7, 12)
    rng = random.Random(1000)
    compared = 0
    while compared < 1000:
        tp, tn, fp, fn = (rng.randint(0, 25) for _ in range(4))
        if tp + tn + fp + fn == 0:
            continue
        value, degenerate = kappa_from_counts(tp, tn, fp, fn)
        if degenerate:
            continue
        assert abs(value - float(kappa_reference(tp, tn, fp, fn))) <= 1e-12, (tp, tn, fp, fn)
        compared += 1


# -- 6 ----------------------------------------------------------------------


@pytest.mark.acceptance(6, "Recall <= severity invariant")
def test_recall_never_exceeds_severity(bank):
    rng = random.Random(6)
    ids = bank.group_ids
    violations = 0
    for _ in range(10_000):
        severe = [g for g in ids if rng.random() < rng.random()] or [rng.choice(ids)]
        mention = {g for g in ids if rng.random() < 0.5}
        truth = truth_with(severe, bank)
        match = MatchResult(mention, {g: [(g, 0)] for g in mention})
        s = severity_score(truth, match)
        assert not s.vacuous
        if recall_score(truth, match) > s.value:
            violations += 1
    assert violations == 0


# -- 7 ----------------------------------------------------------------------


@pytest.mark.acceptance(7, "Determinism")
def test_full_pipeline_determinism(tmp_path):
    outputs = []
    for name in ("first", "second"):
        run_dir = cmd_generate(DATA / "mock_config.yaml", tmp_path / name, "run")
        assert cmd_run(run_dir) == 0
        paths = cmd_report(run_dir)
        outputs.append({k: p.read_bytes() for k, p in paths.items()})
    assert outputs[0]["tables.csv"] == outputs[1]["tables.csv"]
    assert outputs[0] == outputs[1]


# -- 8 ----------------------------------------------------------------------

ROW = re.compile(r"^-?\d\.\d\d$")


@pytest.fixture
def transcript_run(tmp_path):
    src = TRANSCRIPT / "runs" / "transcript"
    dst = tmp_path / "transcript"
    shutil.copytree(src, dst)
    return dst


@pytest.mark.acceptance(8, "Transcript table reproduction")
def test_transcript_reproduces_golden_tables(transcript_run):
    records = cmd_score(transcript_run, TRANSCRIPT / "summaries.json")
    assert len(records) == 50
    paths = cmd_report(transcript_run)
    for name in ("tables.csv", "tables.md"):
        assert paths[name].read_bytes() == (TRANSCRIPT / "golden" / name).read_bytes(), name

    rows = list(csv.reader(paths["tables.csv"].read_text().splitlines()))
    assert rows[0][1:] == ["Model", "Mean Score", "Std Score", "Max Score", "Min Score"]
    for row in rows[1:]:
        assert all(ROW.match(cell) for cell in row[2:]), row
    md_rows = [l for l in paths["tables.md"].read_text().splitlines() if l.startswith("| synthetic")]
    for line in md_rows[:4]:
        cells = [c.strip() for c in line.strip("|").split("|")]
        assert len(cells) == 5 and all(ROW.match(c) for c in cells[1:])


@pytest.mark.acceptance(8, "Transcript table reproduction")
def test_transcript_forms_regenerate(tmp_path):
    fresh = cmd_generate(TRANSCRIPT / "config.yaml", tmp_path)
    fixture = TRANSCRIPT / "runs" / "transcript"
    for sub in ("forms", "truth"):
        for path in sorted((fixture / sub).iterdir()):
            assert path.read_bytes() == (fresh / sub / path.name).read_bytes()


@pytest.mark.acceptance(8, "Transcript table reproduction")
def test_transcript_severity_row_by_hand(transcript_run):
    """Recompute the severity row with exact arithmetic, independent of report.py."""
    cmd_score(transcript_run, TRANSCRIPT / "summaries.json")
    values = [
        Fraction(r.counts.k_s, r.counts.k_p)
        for r in RunDir(transcript_run).load_records()
        if r.counts.k_p > 0
    ]
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    expected = [mean, Fraction(float(var) ** 0.5), max(values), min(values)]

    def half_up(x):
        return f"{(x * 100 + Fraction(1, 2)).__floor__() / 100:.2f}"

    row = next(csv.reader([l for l in (TRANSCRIPT / "golden" / "tables.csv").read_text().splitlines() if l.startswith("Severity Score")]))
    assert row[2:] == [half_up(x) for x in expected]


# -- 9 ----------------------------------------------------------------------

FRAGMENTS = [
    "fatigue", "skin burns", "leakages", "pain in the abdomen", "30", "130", "0.5", "\n",
    "  ", "FLATULENCE", "urge to urinate", "✓", "日本語", "🙂", "{{qa_block}}", "\\", "(", "[",
]


def fuzz_summary(rng: random.Random) -> str:
    parts = []
    for _ in range(rng.randint(0, 12)):
        kind = rng.random()
        if kind < 0.4:
            parts.append(rng.choice(FRAGMENTS))
        elif kind < 0.8:
            parts.append("".join(chr(rng.randint(32, 0x2FFF)) for _ in range(rng.randint(1, 20))))
        else:
            cp = rng.randint(0, 0x10FFFF)
            if 0xD800 <= cp <= 0xDFFF:
                cp = 0xFFFD
            parts.append(chr(cp))
    return "".join(parts)


@pytest.mark.acceptance(9, "Robustness")
def test_score_summary_total_over_fuzz_corpus(bank):
    rng = random.Random(9)
    forms = [generate_form(bank, GeneratorConfig(seed=9, free_text_probability=0.5), i) for i in range(20)]
    truths = [derive_ground_truth(bank, f) for f in forms]
    for i in range(10_000):
        summary = fuzz_summary(rng)
        summary.encode("utf-8")
        form, truth = forms[i % 20], truths[i % 20]
        rec = score_summary(bank, form, truth, summary)
        assert 0.0 <= rec.severity_score <= 1.0
        assert 0.0 <= rec.recall <= 1.0
        assert -1.0 <= rec.kappa <= 1.0
        assert isinstance(rec.treatments_mentioned, bool)
        assert rec.free_text_covered in (True, False, None)
        c = rec.counts
        assert c.k_s + c.k_fn + c.k_fp + c.true_negatives == 10


@pytest.mark.acceptance(9, "Robustness")
def test_parse_grade_reply_shapes():
    assert parse_grade("0.85") == 0.85
    assert parse_grade("Score: 0.9.") == 0.9
    for reply in ("great summary", "n/a", "good"):
        assert parse_grade(reply) is None

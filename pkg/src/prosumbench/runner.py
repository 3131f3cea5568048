"""Run directories and the generate / run / score / report pipeline.

Layout of ``runs/<run_id>/``::

    manifest.json            config, bank hash, per-(model, form) status
    bank.bank                copy of the question bank used
    forms/form_<i>.form      generated patient forms
    truth/form_<i>.truth     derived ground truth
    summaries/<model>/<form_id>.txt
    records/<model>.recs     one MetricRecord per line
    cache/                   reply cache
    report/                  tables.md, tables.csv, distributions.csv
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .cohort import (
    DEFAULT_THRESHOLD,
    ConfigError,
    GeneratorConfig,
    GroundTruth,
    PatientForm,
    derive_ground_truth,
    generate_form,
)
from .gateway import (
    DEFAULT_CONCURRENCY,
    Gateway,
    GatewayError,
    MockContext,
    ModelConfig,
    ResponseCache,
    atomic_write,
)
from .judge import JudgeFailure, judge_summary
from .metrics import MetricRecord, score_summary
from .prompt_builder import build_summarizer_prompt
from .question_bank import BankError, QuestionBank, default_bank_text, load_bank
from .report import emit_distributions, emit_tables, model_stats

log = logging.getLogger(__name__)

PENDING, COMPLETED, FAILED = "pending", "completed", "failed"


class RunError(RuntimeError):
    """A run directory is missing, inconsistent, or has nothing to report."""


@dataclass
class RunConfig:
    generator: GeneratorConfig
    models: list[ModelConfig]
    judge: ModelConfig | None = None
    cohort_size: int = 50
    threshold: float = DEFAULT_THRESHOLD
    bank_path: str | None = None
    run_id: str | None = None
    max_concurrency: int = DEFAULT_CONCURRENCY
    standard_recall: bool = False

    @property
    def seed(self) -> int:
        return self.generator.seed


_TOP_LEVEL = {
    "run_id", "seed", "cohort_size", "threshold", "bank", "generator",
    "models", "judge", "max_concurrency", "standard_recall",
}


def parse_config(data: object, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(data) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    gen = dict(data.get("generator") or {})
    if "seed" in data:
        gen["seed"] = data["seed"]
    generator = GeneratorConfig.from_dict(gen)

    cohort_size = data.get("cohort_size", 50)
    if not isinstance(cohort_size, int) or cohort_size < 1:
        raise ConfigError(f"cohort_size must be a positive integer, got {cohort_size!r}")
    threshold = float(data.get("threshold", DEFAULT_THRESHOLD))
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("threshold must lie in [0, 1]")
    max_concurrency = int(data.get("max_concurrency", DEFAULT_CONCURRENCY))
    if max_concurrency < 1:
        raise ConfigError("max_concurrency must be >= 1")

    try:
        models = [ModelConfig.from_dict(m) for m in data.get("models") or []]
        judge = ModelConfig.from_dict(data["judge"], judge=True) if data.get("judge") else None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc
    ids = [m.model_id for m in models]
    if len(set(ids)) != len(ids):
        raise ConfigError("model_ids must be unique")

    bank_path = data.get("bank")
    if bank_path and base_dir is not None and not Path(bank_path).is_absolute():
        bank_path = str((base_dir / bank_path).resolve())
    return RunConfig(
        generator=generator,
        models=models,
        judge=judge,
        cohort_size=cohort_size,
        threshold=threshold,
        bank_path=bank_path,
        run_id=data.get("run_id"),
        max_concurrency=max_concurrency,
        standard_recall=bool(data.get("standard_recall", False)),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return parse_config(data, base_dir=path.parent)


def safe_name(model_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", model_id)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RunDir:
    """Accessors for one run directory; manifest writes are serialized."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._manifest: dict | None = None
        self._bank: QuestionBank | None = None

    # manifest
    @property
    def manifest_path(self) -> Path:
        return self.path / "manifest.json"

    @property
    def manifest(self) -> dict:
        if self._manifest is None:
            if not self.manifest_path.exists():
                raise RunError(f"no run at {self.path} (manifest.json missing)")
            self._manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        return self._manifest

    def save_manifest(self) -> None:
        atomic_write(self.manifest_path, json.dumps(self.manifest, indent=2) + "\n")

    def set_status(self, model_id: str, form_id: str, status: str) -> None:
        with self._lock:
            self.manifest["status"].setdefault(model_id, {})[form_id] = status
            self.save_manifest()

    def status(self, model_id: str, form_id: str) -> str:
        return self.manifest["status"].get(model_id, {}).get(form_id, PENDING)

    @property
    def form_ids(self) -> list[str]:
        return list(self.manifest["forms"])

    @property
    def threshold(self) -> float:
        return float(self.manifest["threshold"])

    @property
    def models(self) -> list[ModelConfig]:
        return [ModelConfig.from_dict(m) for m in self.manifest["models"]]

    @property
    def judge(self) -> ModelConfig | None:
        j = self.manifest.get("judge")
        return ModelConfig.from_dict(j) if j else None

    # bank, forms, truths
    @property
    def bank(self) -> QuestionBank:
        if self._bank is None:
            expected = self.manifest["bank"]["sha256"]
            text = (self.path / "bank.bank").read_text(encoding="utf-8")
            if sha256_text(text) != expected:
                raise RunError(f"{self.path}/bank.bank does not match the manifest hash")
            self._bank = load_bank(text)
        return self._bank

    def form_path(self, form_id: str) -> Path:
        return self.path / "forms" / f"{form_id}.form"

    def truth_path(self, form_id: str) -> Path:
        return self.path / "truth" / f"{form_id}.truth"

    def form(self, form_id: str) -> PatientForm:
        return PatientForm.from_json(self.form_path(form_id).read_text(encoding="utf-8"))

    def truth(self, form_id: str) -> GroundTruth:
        return GroundTruth.from_json(self.truth_path(form_id).read_text(encoding="utf-8"))

    # outputs
    def summary_path(self, model_id: str, form_id: str) -> Path:
        return self.path / "summaries" / safe_name(model_id) / f"{form_id}.txt"

    def records_path(self, model_id: str) -> Path:
        return self.path / "records" / f"{safe_name(model_id)}.recs"

    @property
    def cache_dir(self) -> Path:
        return self.path / "cache"

    @property
    def report_dir(self) -> Path:
        return self.path / "report"

    def load_records(self, model_id: str | None = None) -> list[MetricRecord]:
        if model_id is not None:
            paths = [self.records_path(model_id)]
        else:
            paths = sorted((self.path / "records").glob("*.recs"))
        out: list[MetricRecord] = []
        for p in paths:
            if p.exists():
                out.extend(
                    MetricRecord.from_line(line)
                    for line in p.read_text(encoding="utf-8").splitlines()
                    if line.strip()
                )
        return out


class RecordStore:
    """Per-model record files, rewritten atomically on every update."""

    def __init__(self, run: RunDir):
        self.run = run
        self._lock = threading.Lock()
        self._order = {fid: i for i, fid in enumerate(run.form_ids)}
        self._records: dict[str, dict[str, MetricRecord]] = {}

    def _loaded(self, model_id: str) -> dict[str, MetricRecord]:
        if model_id not in self._records:
            self._records[model_id] = {r.form_id: r for r in self.run.load_records(model_id)}
        return self._records[model_id]

    def put(self, record: MetricRecord) -> None:
        with self._lock:
            recs = self._loaded(record.model_id)
            recs[record.form_id] = record
            ordered = sorted(recs.values(), key=lambda r: self._order.get(r.form_id, len(self._order)))
            text = "".join(r.to_line() + "\n" for r in ordered)
            atomic_write(self.run.records_path(record.model_id), text)


# -- commands ---------------------------------------------------------------


def cmd_generate(
    config: RunConfig | str | Path, out_dir: str | Path = "runs", run_id: str | None = None
) -> Path:
    """Create a run directory holding the manifest, forms and ground truths."""
    if not isinstance(config, RunConfig):
        config = load_config(config)
    if config.bank_path:
        try:
            bank_text = Path(config.bank_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read bank {config.bank_path}: {exc}") from exc
        bank_source = str(config.bank_path)
    else:
        bank_text = default_bank_text()
        bank_source = "builtin:pro_ctcae_prostate.bank"
    try:
        bank = load_bank(bank_text)
    except BankError as exc:
        raise ConfigError(f"invalid bank: {exc}") from exc

    run_id = run_id or config.run_id or (
        datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ") + f"-seed{config.seed}"
    )
    path = Path(out_dir) / run_id
    if (path / "manifest.json").exists():
        raise RunError(f"run directory {path} already exists")
    path.mkdir(parents=True, exist_ok=True)

    atomic_write(path / "bank.bank", bank_text)
    form_ids = []
    for index in range(config.cohort_size):
        form = generate_form(bank, config.generator, index)
        truth = derive_ground_truth(bank, form, config.threshold)
        form_ids.append(form.form_id)
        atomic_write(path / "forms" / f"{form.form_id}.form", form.to_json())
        atomic_write(path / "truth" / f"{form.form_id}.truth", truth.to_json())

    gen = config.generator
    manifest = {
        "run_id": run_id,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seed": config.seed,
        "cohort_size": config.cohort_size,
        "threshold": config.threshold,
        "standard_recall": config.standard_recall,
        "max_concurrency": config.max_concurrency,
        "bank": {"path": bank_source, "sha256": sha256_text(bank_text)},
        "generator": {
            "seed": gen.seed,
            "option_weights": gen.option_weights,
            "treatments_range": list(gen.treatments_range),
            "free_text_pool": list(gen.free_text_pool),
            "free_text_probability": gen.free_text_probability,
            "language_weights": list(gen.language_weights),
        },
        "models": [m.to_dict() for m in config.models],
        "judge": config.judge.to_dict() if config.judge else None,
        "forms": form_ids,
        "status": {m.model_id: {fid: PENDING for fid in form_ids} for m in config.models},
    }
    atomic_write(path / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    log.info("generated %d forms in %s", len(form_ids), path)
    return path


def _select_models(run: RunDir, names: list[str] | None) -> list[ModelConfig]:
    models = run.models
    if not names:
        return models
    by_id = {m.model_id: m for m in models}
    missing = [n for n in names if n not in by_id]
    if missing:
        raise ConfigError(f"models not configured in this run: {', '.join(missing)}")
    return [by_id[n] for n in names]


def cmd_run(
    run_dir: str | Path,
    models: list[str] | None = None,
    *,
    gateway: Gateway | None = None,
) -> int:
    """Summarize, score and (optionally) judge every pending (model, form) pair.

    Returns 0 when every selected pair is completed, 1 otherwise.
    """
    run = RunDir(run_dir)
    selected = _select_models(run, models)
    bank = run.bank
    judge = run.judge
    standard_recall = bool(run.manifest.get("standard_recall", False))
    store = RecordStore(run)
    own_gateway = gateway is None
    if gateway is None:
        gateway = Gateway(
            ResponseCache(run.cache_dir),
            max_concurrency=int(run.manifest.get("max_concurrency", DEFAULT_CONCURRENCY)),
        )

    def process(model: ModelConfig, form_id: str) -> bool:
        form, truth = run.form(form_id), run.truth(form_id)
        context = MockContext(bank, form, truth)
        try:
            result = gateway.complete(model, build_summarizer_prompt(bank, form), context=context)
        except (GatewayError, ValueError) as exc:
            log.error("%s / %s failed: %s", model.model_id, form_id, exc)
            run.set_status(model.model_id, form_id, FAILED)
            return False
        summary = result.text
        atomic_write(run.summary_path(model.model_id, form_id), summary)
        grade = None
        if judge is not None and summary.strip():
            try:
                grade = judge_summary(judge, bank, form, summary, gateway=gateway).grade
            except JudgeFailure as exc:
                log.warning("%s / %s: %s", model.model_id, form_id, exc)
        record = score_summary(
            bank, form, truth, summary,
            judge_grade=grade, model_id=model.model_id, standard_recall=standard_recall,
        )
        store.put(record)
        run.set_status(model.model_id, form_id, COMPLETED)
        return True

    jobs = [
        (m, fid)
        for m in selected
        for fid in run.form_ids
        if run.status(m.model_id, fid) != COMPLETED
    ]
    workers = max(1, gateway.max_concurrency * max(1, len(selected)))
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda job: process(*job), jobs))
    finally:
        if own_gateway:
            gateway.close()

    failed = [
        (m.model_id, fid)
        for m in selected
        for fid in run.form_ids
        if run.status(m.model_id, fid) != COMPLETED
    ]
    return 1 if failed else 0


def _load_summaries(path: Path, default_model: str) -> list[tuple[str, str, str, float | None]]:
    """Read (model_id, form_id, summary, judge_grade) entries.

    Accepted shapes: ``{form_id: text}``, ``{form_id: {"summary": ..., "judge_grade": ...}}``
    or a list of objects with ``form_id``, ``summary`` and optional ``model_id``
    and ``judge_grade``.
    """
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise RunError(f"cannot read summaries {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise RunError(f"malformed summaries file {path}: {exc}") from exc
    entries = []
    if isinstance(data, dict):
        for form_id, value in data.items():
            if isinstance(value, str):
                entries.append((default_model, form_id, value, None))
            else:
                entries.append((default_model, form_id, value["summary"], value.get("judge_grade")))
    elif isinstance(data, list):
        for item in data:
            entries.append(
                (
                    item.get("model_id", default_model),
                    item["form_id"],
                    item["summary"],
                    item.get("judge_grade"),
                )
            )
    else:
        raise RunError(f"summaries file {path} must hold an object or a list")
    return entries


def cmd_score(
    run_dir: str | Path, summaries_path: str | Path, model_id: str = "external"
) -> list[MetricRecord]:
    """Score externally produced summaries against the run's ground truth; no model calls."""
    run = RunDir(run_dir)
    bank = run.bank
    known = set(run.form_ids)
    entries = _load_summaries(Path(summaries_path), model_id)
    for _, form_id, _, _ in entries:
        if form_id not in known:
            raise RunError(f"form_id {form_id!r} is not part of run {run.manifest['run_id']}")
    standard_recall = bool(run.manifest.get("standard_recall", False))
    store = RecordStore(run)
    records = []
    for mid, form_id, summary, grade in entries:
        form, truth = run.form(form_id), run.truth(form_id)
        atomic_write(run.summary_path(mid, form_id), summary)
        rec = score_summary(
            bank, form, truth, summary,
            judge_grade=None if grade is None else float(grade),
            model_id=mid, standard_recall=standard_recall,
        )
        store.put(rec)
        records.append(rec)
    return records


def model_order(run: RunDir, records: list[MetricRecord]) -> list[str]:
    configured = [m["model_id"] for m in run.manifest["models"]]
    present = {r.model_id for r in records}
    return [m for m in configured if m in present] + sorted(present - set(configured))


def cmd_report(run_dir: str | Path) -> dict[str, Path]:
    run = RunDir(run_dir)
    records = run.load_records()
    if not records:
        raise RunError(f"run {run.path} has no records to report")
    order = {fid: i for i, fid in enumerate(run.form_ids)}
    models = model_order(run, records)
    by_model = {
        m: sorted((r for r in records if r.model_id == m), key=lambda r: order.get(r.form_id, 0))
        for m in models
    }
    stats = [model_stats(m, by_model[m]) for m in models]
    out = run.report_dir
    paths = {
        "tables.md": out / "tables.md",
        "tables.csv": out / "tables.csv",
        "distributions.csv": out / "distributions.csv",
    }
    atomic_write(paths["tables.md"], emit_tables(stats, "markdown"))
    atomic_write(paths["tables.csv"], emit_tables(stats, "csv"))
    emit_distributions([r for m in models for r in by_model[m]], paths["distributions.csv"])
    return paths

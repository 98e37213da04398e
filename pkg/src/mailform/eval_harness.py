"""Scoring completed forms against a gold key, and the per-form cost model."""

from __future__ import annotations

import json
import math
from fractions import Fraction
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import ParameterError, ScoringError
from .form_model import FormSchema, read_schema
from .textnorm import normalize_answer


class Outcome(str, Enum):
    CORRECT = "Correct"
    INCORRECT = "Incorrect"
    BLANK = "Blank"


@dataclass(frozen=True)
class GoldKey:
    """Expected value per field; ``None`` means the field should stay blank."""

    entries: Mapping[str, str | None]

    @property
    def expected(self) -> dict[str, str]:
        return {k: v for k, v in self.entries.items() if v is not None}

    @property
    def expected_blank(self) -> list[str]:
        return [k for k, v in self.entries.items() if v is None]

    @classmethod
    def load(cls, path: str | Path) -> GoldKey:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ScoringError(f"gold key {path} unreadable: {exc}") from exc
        if not isinstance(data, dict) or not all(v is None or isinstance(v, str) for v in data.values()):
            raise ScoringError(f"gold key {path} must map field names to strings or null")
        return cls(data)


@dataclass
class ScoreReport:
    correct: int = 0
    incorrect: int = 0
    blank: int = 0
    per_field: dict[str, Outcome] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.correct + self.incorrect + self.blank

    @property
    def counts(self) -> tuple[int, int, int]:
        return self.correct, self.incorrect, self.blank

    def to_dict(self) -> dict[str, Any]:
        return {"correct": self.correct, "incorrect": self.incorrect, "blank": self.blank,
                "total": self.total, "per_field": {k: v.value for k, v in self.per_field.items()}}


def score_plan(observed: Mapping[str, str | None], gold: GoldKey, schema: FormSchema) -> ScoreReport:
    """Classify every schema field as Correct, Incorrect or Blank.

    Empty (or missing, or ``None``) observations are Blank. A non-empty value
    is Correct only when the gold key expects a value and it matches after
    trimming, NFC and case folding; filling a field the key expects blank is
    Incorrect.
    """
    names = schema.names
    if set(gold.entries) != set(names):
        missing = sorted(set(names) - set(gold.entries))
        extra = sorted(set(gold.entries) - set(names))
        raise ScoringError(f"gold key does not match the form (missing {missing}, extra {extra})")
    stray = sorted(set(observed) - set(names))
    if stray:
        raise ScoringError(f"observed values for fields not on the form: {stray}")

    report = ScoreReport()
    for name in names:
        value = observed.get(name)
        if value is None or not str(value).strip():
            outcome = Outcome.BLANK
        else:
            expected = gold.entries[name]
            if expected is not None and normalize_answer(str(value)) == normalize_answer(expected):
                outcome = Outcome.CORRECT
            else:
                outcome = Outcome.INCORRECT
        report.per_field[name] = outcome
        if outcome is Outcome.CORRECT:
            report.correct += 1
        elif outcome is Outcome.INCORRECT:
            report.incorrect += 1
        else:
            report.blank += 1
    return report


def score_batch(runs: Sequence[tuple[str, Mapping[str, str | None]]], gold: GoldKey,
                schema: FormSchema) -> list[tuple[str, ScoreReport]]:
    """One report per run, best first (most correct, then label)."""
    rows = [(label, score_plan(observed, gold, schema)) for label, observed in runs]
    rows.sort(key=lambda r: (-r[1].correct, r[0]))
    return rows


def render_table(rows: Sequence[tuple[str, ScoreReport]]) -> str:
    header = ("Model", "Correct", "Incorrect", "Blank")
    width = max([len(header[0])] + [len(label) for label, _ in rows])
    lines = [f"{header[0]:<{width}}  {header[1]:>7}  {header[2]:>9}  {header[3]:>5}"]
    lines.append("-" * len(lines[0]))
    for label, r in rows:
        lines.append(f"{label:<{width}}  {r.correct:>7}  {r.incorrect:>9}  {r.blank:>5}")
    return "\n".join(lines)


def load_schema(path: str | Path) -> FormSchema:
    """A schema from a PDF form or from the JSON that ``schema --json`` prints."""
    data = Path(path).read_bytes()
    if data.lstrip().startswith(b"%PDF"):
        return read_schema(data)
    try:
        return FormSchema.from_dict(json.loads(data))
    except (ValueError, KeyError, TypeError) as exc:
        raise ScoringError(f"{path} is neither a PDF form nor a schema JSON: {exc}") from exc


def load_runs(runs_dir: str | Path) -> list[tuple[str, dict[str, str | None]]]:
    """``<label>.json`` observed-plan files, sorted by label."""
    runs = []
    for path in sorted(Path(runs_dir).glob("*.json")):
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ScoringError(f"run file {path.name} is not valid JSON: {exc}") from exc
        if isinstance(data, dict) and "entries" in data and isinstance(data["entries"], dict):
            data = data["entries"]
        if not isinstance(data, dict) or not all(v is None or isinstance(v, str) for v in data.values()):
            raise ScoringError(f"run file {path.name} must map field names to strings or null")
        runs.append((path.stem, data))
    return runs


# --------------------------------------------------------------------------- #
# cost model

@dataclass(frozen=True)
class CostParams:
    annual_salary_eur: float = 40_000.0
    hours_per_week: float = 40.0
    weeks_per_year: float = 52.0
    manual_minutes: float = 15.0
    supervision_minutes: float = 5.0
    cloud_cost_eur: float = 0.10


@dataclass(frozen=True)
class CostReport:
    hourly_wage_eur: float
    manual_cost_eur: float
    system_cost_eur: float
    savings_eur: float
    savings_pct: float
    # the same quantities in exact rational arithmetic, before any float rounding
    exact: Mapping[str, Fraction] = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self, rounded: bool = False) -> dict[str, float]:
        d = {
            "hourly_wage_eur": self.hourly_wage_eur,
            "manual_cost_eur": self.manual_cost_eur,
            "system_cost_eur": self.system_cost_eur,
            "savings_eur": self.savings_eur,
            "savings_pct": self.savings_pct,
        }
        if rounded:
            d = {k: round(v * 100, 1) if k == "savings_pct" else round(v, 2) for k, v in d.items()}
        return d


def cost_model(params: CostParams) -> CostReport:
    for name in ("annual_salary_eur", "hours_per_week", "weeks_per_year", "manual_minutes"):
        v = getattr(params, name)
        if not math.isfinite(v) or v <= 0:
            raise ParameterError(f"{name} must be positive, got {v}")
    for name in ("supervision_minutes", "cloud_cost_eur"):
        v = getattr(params, name)
        if not math.isfinite(v) or v < 0:
            raise ParameterError(f"{name} must be non-negative, got {v}")
    q = {k: Fraction(v) for k, v in vars(params).items()}
    wage = q["annual_salary_eur"] / (q["hours_per_week"] * q["weeks_per_year"])
    manual = q["manual_minutes"] / 60 * wage
    system = q["cloud_cost_eur"] + q["supervision_minutes"] / 60 * wage
    savings = manual - system
    exact = {"hourly_wage_eur": wage, "manual_cost_eur": manual, "system_cost_eur": system,
             "savings_eur": savings, "savings_pct": savings / manual}
    return CostReport(*(float(exact[k]) for k in exact), exact=exact)


def render_cost(report: CostReport, params: CostParams) -> str:
    r = report.to_dict(rounded=True)
    rows = [
        ("Method", "Time [min]", "Cost [EUR]"),
        ("Manual Completion", f"{params.manual_minutes:g}", f"{r['manual_cost_eur']:.2f}"),
        ("System + Supervision", f"{params.supervision_minutes:g}", f"{r['system_cost_eur']:.2f}"),
    ]
    w0 = max(len(a) for a, _, _ in rows)
    lines = [f"{a:<{w0}}  {b:>10}  {c:>10}" for a, b, c in rows]
    lines.insert(1, "-" * len(lines[0]))
    lines += [
        "",
        f"Hourly wage:   EUR {r['hourly_wage_eur']:.2f}",
        f"Savings:       EUR {r['savings_eur']:.2f} per form ({r['savings_pct']:.1f}%)",
    ]
    return "\n".join(lines)

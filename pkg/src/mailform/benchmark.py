"""The bundled 29-field scoring benchmark.

A synthetic archive-consultation request form, its gold key (17 fields the
sample request supplies, 12 it does not) and observed-plan fixtures
engineered to land on published per-model counts. The fixtures exercise
the scoring rules; they are not model outputs.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .form_model import FieldKind, generate_test_form, read_schema


@dataclass(frozen=True)
class BenchField:
    name: str
    kind: FieldKind
    options: tuple[str, ...] = ()
    max_len: int | None = None
    # gold value; None = must stay blank
    expected: str | None = None
    # plausible wrong answer (fields with a gold value) or invented one (gold blank)
    wrong: str | None = None


T, C, X = FieldKind.TEXT, FieldKind.CHECKBOX, FieldKind.CHOICE

FIELDS: tuple[BenchField, ...] = (
    BenchField("Nombre", T, expected="MARIA", wrong="MARIA GARCIA"),
    BenchField("Primer apellido", T, expected="GARCIA", wrong="LOPEZ"),
    BenchField("Segundo apellido", T, expected="LOPEZ", wrong="GARCIA"),
    BenchField("DNI/NIE", T, max_len=9, expected="12345678Z", wrong="12345678"),
    BenchField("Fecha de nacimiento", T, expected="01/02/1985", wrong="02/01/1985"),
    BenchField("Sexo", X, ("M", "F"), expected="F", wrong="M"),
    BenchField("Nacionalidad", T, expected="ESP", wrong="ESPAÑOLA DE ORIGEN"),
    BenchField("Domicilio", T, expected="CALLE MAYOR 1", wrong="CALLE MAYOR"),
    BenchField("Localidad", T, expected="MADRID", wrong="ALCALA DE HENARES"),
    BenchField("Provincia", X, ("Madrid", "Barcelona", "Valencia", "Sevilla", "Otra"),
               expected="Madrid", wrong="Otra"),
    BenchField("Código postal", T, max_len=5, expected="28001", wrong="28080"),
    BenchField("Teléfono", T, expected="600123456", wrong="912345678"),
    BenchField("Correo electrónico", T, expected="maria.garcia@example.com",
               wrong="mgarcia@example.com"),
    BenchField("Actúa en nombre propio", C, expected="true"),
    BenchField("Documento solicitado", T, expected="EXPEDIENTE 2023/145", wrong="EXPEDIENTE 2023"),
    BenchField("Motivo de la consulta", T, expected="INVESTIGACION PERSONAL", wrong="TRAMITE"),
    BenchField("Acepta protección de datos", C, expected="true"),
    BenchField("Nombre del representante", T, wrong="MARIA GARCIA LOPEZ"),
    BenchField("DNI del representante", T, wrong="12345678Z"),
    BenchField("Razón social", T, wrong="GARCIA LOPEZ SL"),
    BenchField("CIF", T, wrong="B12345678"),
    BenchField("Fax", T, wrong="600123456"),
    BenchField("Número de registro", T, wrong="2023/145"),
    BenchField("Fecha de resolución", T, wrong="01/02/2023"),
    BenchField("Observaciones", T, wrong="NINGUNA"),
    BenchField("Copia certificada", C, wrong="true"),
    BenchField("Envío postal", C, wrong="true"),
    BenchField("Formato de entrega", X, ("Papel", "Digital"), wrong="Digital"),
    BenchField("Firma electrónica", T, wrong="MARIA GARCIA"),
)

# (label, correct, incorrect, blank) of the published comparison
PUBLISHED_ROWS: tuple[tuple[str, int, int, int], ...] = (
    ("Optimal result", 17, 0, 12),
    ("llama-4-maverick-17b-128e-instruct", 16, 2, 11),
    ("llama-4-scout-17b-16e-instruct", 14, 3, 12),
    ("gemini-2.5-pro", 13, 4, 12),
    ("chatgpt-4.1", 12, 5, 12),
    ("deepseek-r1", 12, 5, 12),
    ("llama-3.3-70b-instruct", 10, 8, 11),
    ("qwen-qwq-32b", 10, 10, 9),
)


def form_spec() -> list[tuple]:
    return [(f.name, f.kind, f.options, f.max_len) for f in FIELDS]


def gold_entries() -> dict[str, str | None]:
    return {f.name: f.expected for f in FIELDS}


def engineer_observed(label: str, correct: int, incorrect: int, blank: int) -> dict[str, str | None]:
    """An observed plan that scores exactly (correct, incorrect, blank).

    Wrong answers go to fields with a gold value first (checkboxes cannot be
    wrong, only blank); any remaining incorrect count is made up by filling
    fields whose gold value is blank. Field choice is seeded by ``label``.
    """
    expected = [f for f in FIELDS if f.expected is not None]
    unexpected = [f for f in FIELDS if f.expected is None]
    if correct + incorrect + blank != len(FIELDS) or correct > len(expected):
        raise ValueError(f"unreachable counts {(correct, incorrect, blank)}")
    misses = len(expected) - correct
    rng = random.Random(label)
    can_be_wrong = [f for f in expected if f.wrong is not None]
    rng.shuffle(can_be_wrong)
    wrong = can_be_wrong[: min(misses, incorrect)]
    hallucinated_count = incorrect - len(wrong)
    if hallucinated_count > len(unexpected):
        raise ValueError(f"unreachable counts {(correct, incorrect, blank)}")
    pool = list(unexpected)
    rng.shuffle(pool)
    hallucinated = {f.name for f in pool[:hallucinated_count]}
    missed = [f for f in expected if f not in wrong]
    rng.shuffle(missed)
    left_blank = {f.name for f in missed[: misses - len(wrong)]}
    wrong_names = {f.name for f in wrong}

    out: dict[str, str | None] = {}
    for f in FIELDS:
        if f.name in wrong_names or f.name in hallucinated:
            out[f.name] = f.wrong
        elif f.expected is not None and f.name not in left_blank:
            out[f.name] = f.expected
        else:
            out[f.name] = None
    return out


def run_filename(label: str) -> str:
    return f"{label}.json"


def write_benchmark(directory: str | Path) -> None:
    """Regenerate form.pdf, schema.json, gold.json and runs/ under ``directory``."""
    d = Path(directory)
    (d / "runs").mkdir(parents=True, exist_ok=True)
    pdf = generate_test_form(form_spec(), title="Solicitud de consulta de documentos (sintetico)")
    (d / "form.pdf").write_bytes(pdf)
    dump = lambda obj: json.dumps(obj, ensure_ascii=False, indent=2) + "\n"  # noqa: E731
    (d / "schema.json").write_text(dump(read_schema(pdf).to_dict()), encoding="utf-8")
    (d / "gold.json").write_text(dump(gold_entries()), encoding="utf-8")
    for label, c, i, b in PUBLISHED_ROWS:
        (d / "runs" / run_filename(label)).write_text(dump(engineer_observed(label, c, i, b)),
                                                      encoding="utf-8")


def bundled_dir() -> Path:
    return Path(str(resources.files("mailform") / "data" / "benchmark"))


if __name__ == "__main__":
    write_benchmark(bundled_dir())
